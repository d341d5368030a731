#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "momq/corpus.hpp"
#include "momq/lora.hpp"
#include "momq/moe.hpp"

namespace momq {

struct ModelConfig {
    int n_layers = 4;
    int64_t hidden_dim = 128;
    int n_heads = 4;
    int64_t vocab_size = 0;  // set from the tokenizer
    int64_t max_seq_len = 256;
    int64_t ffn_inner_dim = 512;
    int n_dialects = 4;
    int experts_per_group = 4;
    int shared_experts = 2;
    int top_k = 2;
    int64_t lora_rank = 8;
    double lora_scale = 1.0;
    bool soft_dialect_mix = false;
    Precision precision = Precision::f64;

    void validate() const;
};

std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& text);

enum class TrainMode { momq, lora, full_ft };
const std::string& train_mode_name(TrainMode m);
TrainMode train_mode_from_name(const std::string& name);

struct Parameter {
    std::string name;
    Tensor tensor;
    bool trainable = false;
};

// all parameter values by name; the exchange format between pretraining,
// fine-tuning model construction, and checkpoints
using ParamSnapshot = std::map<std::string, std::pair<Shape, std::vector<double>>>;

struct ForwardResult {
    Tensor logits;                     // [T, vocab]
    std::vector<RoutingTrace> traces;  // one per layer in momq mode, else empty
    std::vector<MoeLossHooks> hooks;   // graph handles for the auxiliary losses
};

struct GenerateResult {
    std::vector<int64_t> tokens;  // continuation, end token stripped
    bool ended = false;           // end token was produced within budget
};

// Decoder-only causal transformer. Pre-norm blocks with rms-norm, silu FFN,
// learned absolute positions, no biases. The FFN down-projection hosts the
// MoE in momq mode; attention and the up-projection carry vanilla adapters
// in momq and lora modes; full_ft has no adapters at all.
class Model {
public:
    Model(const ModelConfig& cfg, TrainMode mode, Rng& rng);
    Model(const ModelConfig& cfg, TrainMode mode, const ParamSnapshot& base, Rng& rng);

    const ModelConfig& config() const { return cfg_; }
    TrainMode mode() const { return mode_; }

    const std::vector<Parameter>& params() const { return params_; }
    Parameter& param(const std::string& name);
    std::vector<Parameter> trainable_params() const;
    uint64_t frozen_hash() const;
    ParamSnapshot snapshot() const;
    void load_snapshot(const ParamSnapshot& snap);  // shapes must match

    ForwardResult forward(const std::vector<int64_t>& tokens, int64_t dialect_id,
                          DispatchMode dispatch = DispatchMode::learned,
                          Rng* random_rng = nullptr) const;

    GenerateResult generate(const std::vector<int64_t>& prompt, int max_new, int64_t end_token,
                            int64_t dialect_id, DispatchMode dispatch = DispatchMode::learned,
                            Rng* random_rng = nullptr) const;

private:
    struct AttentionBlock {
        FrozenLinear wq, wk, wv, wo;
    };
    struct LayerBlock {
        AttentionBlock attn;
        FrozenLinear up, down;
        std::optional<MoeLayer> moe;  // momq mode
        Tensor norm1_gain, norm2_gain;
    };

    void build(Rng& rng, const ParamSnapshot* base);
    Tensor attention(const LayerBlock& layer, const Tensor& h) const;

    ModelConfig cfg_;
    TrainMode mode_;
    Tensor tok_emb_, pos_emb_, head_, final_norm_gain_;
    std::vector<LayerBlock> layers_;
    std::vector<Parameter> params_;
};

}  // namespace momq
