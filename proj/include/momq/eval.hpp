#pragma once

#include <map>
#include <string>
#include <vector>

#include "momq/trainer.hpp"

namespace momq {

struct DialectScore {
    int64_t samples = 0;
    int64_t executable = 0;
    int64_t execution_match = 0;
    double exec_pct() const { return samples ? 100.0 * executable / samples : 0.0; }
    double ex_pct() const { return samples ? 100.0 * execution_match / samples : 0.0; }
};

struct EvalReport {
    std::string mode;
    uint64_t seed = 0;
    std::string config_digest;
    std::map<int, DialectScore> per_dialect;

    double avg_ex() const;
    double avg_exec() const;
    std::string to_json() const;
    std::string to_markdown() const;
};

struct EvalOptions {
    int max_new = 48;
    DispatchMode dispatch = DispatchMode::learned;
    int threads = 0;                // 0: hardware concurrency; MOMQ_THREADS caps it
    int per_dialect_cap = -1;       // evaluate at most this many test samples per dialect
    bool validate_traces = false;   // assert routing invariants on every forward
    uint64_t seed = 0;              // recorded in the report; feeds random dispatch
    std::string dump_predictions;   // when set, per-sample JSONL written here
    int only_dialect = -1;          // restrict scoring to one dialect (single-dialect baselines)
};

// Greedy-generates one query per test sample and scores EXEC (runs without
// error) and EX (execution result equals the gold result). Generation
// overflow counts as non-executable.
EvalReport evaluate(const Model& model, const Corpus& corpus, const Tokenizer& tok,
                    const EvalOptions& options = {});

struct PredictionScore {
    bool executable = false;
    bool execution_match = false;
};

// Scores one predicted query against the sample's gold on its database.
PredictionScore score_prediction(const DialectSample& sample, const std::string& predicted_query,
                                 bool generation_ended, const Corpus& corpus);

// ---------------------------------------------------------------------------
// Routing inspection
// ---------------------------------------------------------------------------

struct RoutingSummary {
    int n_layers = 0;
    int n_groups = 0;
    int n_experts = 0;
    std::vector<std::vector<double>> layer_group_probs;  // [L][M] mean dialect probabilities
    std::vector<std::vector<double>> group_gate_mass;    // [M][N] mean gate mass per expert
    int dominant_group = -1;                             // highest mean probability across layers
    int64_t generated_tokens = 0;

    std::string to_json() const;
};

// Generates on the sample and aggregates per-layer router traces over the
// generated tokens. momq-mode models only. csv_rows, when given, receives one
// line per (generated token, layer).
RoutingSummary inspect_routing(const Model& model, const DialectSample& sample, const Tokenizer& tok,
                               int max_new, std::vector<std::string>* csv_rows = nullptr);

// ---------------------------------------------------------------------------
// Experiment protocols
// ---------------------------------------------------------------------------

struct ExperimentSettings {
    ModelConfig model;  // vocab_size ignored; filled per corpus
    TrainConfig train;
    int train_per_dialect = 2000;
    int test_per_dialect = 200;
    int low_resource_train = 128;
    int corpus_databases = 10;
    uint64_t corpus_seed = 1;
    int pretrain_steps = 2000;
    int pretrain_batch = 4;
    double pretrain_lr = 1e-3;
    int pretrain_segment_len = 128;
    EvalOptions eval;
    std::vector<std::string> methods = {"momq", "lora"};  // full / high_resource protocols
    bool save_checkpoints = false;
};

struct ProtocolSpec {
    std::string name;                // full | high_resource | ablation | sweep_rank | sweep_experts
    int high_resource_dialect = 0;   // high_resource only
    std::vector<int64_t> sweep_values;  // optional override for the sweep grids
};

struct RunRecord {
    std::string label;  // method name, ablation row, or sweep point
    uint64_t seed = 0;
    EvalReport report;
};

struct ExperimentResult {
    std::string protocol;
    std::vector<RunRecord> runs;
    std::string markdown;  // aggregated table, mean over seeds
    std::string json;
};

// Trains and evaluates every (configuration, seed) cell of the protocol.
// Within one seed all configurations share the corpus and the pretrained
// base. Artifacts are written under out_dir when given.
ExperimentResult run_experiment(const ProtocolSpec& spec, const ExperimentSettings& settings,
                                const std::vector<uint64_t>& seeds, const std::string& out_dir = "");

// ablation rows in table order; exposed for tests
struct AblationRow {
    std::string label;
    bool shared_group = true;
    bool drl = true;
    bool dialect_router = true;
    bool dialect_groups = true;
};
const std::vector<AblationRow>& ablation_lattice();

}  // namespace momq
