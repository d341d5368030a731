#pragma once

#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "momq/corpus.hpp"
#include "momq/model.hpp"

namespace momq {

struct CorruptionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct TrainError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct TrainConfig {
    std::string mode = "momq";  // momq | lora | full_ft | full_ft_single_dialect
    double alpha = 0.1;         // dialect router loss weight
    double lambda = 0.001;      // balance loss weight
    double epsilon = 0.1;       // dialect smoothing factor
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double weight_decay = 0.1;
    int epochs = 3;
    int batch_size = 8;
    uint64_t seed = 1;
    std::string loss_masking = "response";  // response: gold-query tokens only; all: every position
    double warmup_frac = 0.05;
    double grad_clip = 1.0;
    std::string dispatch = "learned";  // learned | random | oracle
    int single_dialect = -1;           // full_ft_single_dialect only
    bool validate_traces = false;

    TrainMode model_mode() const;
    DispatchMode dispatch_mode() const;
    void validate() const;
};

std::string train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const std::string& text);

// Decoupled-weight-decay Adam. Parameters without a gradient are skipped;
// decay applies to matrices only, never to 1-d gains.
class AdamW {
public:
    AdamW(double lr, double beta1, double beta2, double weight_decay, double grad_clip);

    void step(std::vector<Parameter>& params, double lr_now, Precision precision);
    bool has_state(const TensorNode* node) const { return m_.count(node) > 0; }
    int64_t steps_taken() const { return t_; }

private:
    double lr_, beta1_, beta2_, weight_decay_, grad_clip_;
    int64_t t_ = 0;
    std::unordered_map<const TensorNode*, std::vector<double>> m_, v_;
};

struct LossBreakdown {
    double total = 0.0;
    double nll = 0.0;
    double drl = 0.0;
    double bal = 0.0;
    double router_top1_acc = 0.0;
};

// Builds the fine-tuning loss over a batch inside the current Graph:
// masked next-token NLL plus alpha * router loss plus lambda * balance loss,
// each averaged over the batch samples.
std::pair<Tensor, LossBreakdown> total_loss(const std::vector<const DialectSample*>& batch,
                                            const Model& model, const Tokenizer& tok,
                                            const TrainConfig& cfg, Rng* dispatch_rng);

// training token ids and the response mask for one sample
struct EncodedSample {
    std::vector<int64_t> inputs;
    std::vector<int64_t> targets;
    std::vector<double> mask;  // 1.0 where the target counts toward the NLL
};
EncodedSample encode_for_training(const DialectSample& sample, const Tokenizer& tok,
                                  const std::string& loss_masking);

// Fine-tunes the model in place. Returns the JSONL metrics lines (one per
// step); also written to <out_dir>/metrics.jsonl when out_dir is given.
// A NaN loss aborts with a diagnostic dump of the offending batch.
std::vector<std::string> train(Model& model, const Corpus& corpus, const Tokenizer& tok,
                               const TrainConfig& cfg, const std::string& out_dir = "");

struct PretrainResult {
    ParamSnapshot frozen;
    uint64_t frozen_hash = 0;
    double heldout_loss_before = 0.0;
    double heldout_loss_after = 0.0;
    std::vector<std::string> metrics;
};

// Next-token pretraining of a dense model over the mixed corpus lines; all
// weights are frozen afterwards and the snapshot hash recorded.
PretrainResult pretrain_base(const ModelConfig& cfg, const Corpus& corpus, int steps, uint64_t seed,
                             int batch_size = 4, double lr = 1e-3, int segment_len = 128);

uint64_t snapshot_hash(const ParamSnapshot& snap);

// ---------------------------------------------------------------------------
// Checkpoints: manifest.json plus one little-endian binary per parameter.
// ---------------------------------------------------------------------------

struct Checkpoint {
    ModelConfig config;
    std::string mode;
    int64_t step = 0;
    uint64_t frozen_hash = 0;
    uint64_t snapshot_hash = 0;
    ParamSnapshot params;
    std::optional<std::string> train_config_json;
};

void save_checkpoint(const Model& model, const std::string& dir, int64_t step,
                     const std::string& train_config_json = "");
Checkpoint load_checkpoint(const std::string& dir);  // throws CorruptionError on hash mismatch
Model model_from_checkpoint(const Checkpoint& ck, uint64_t seed = 0);

}  // namespace momq
