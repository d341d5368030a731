#pragma once

#include <string>
#include <vector>

#include "momq/eval.hpp"

namespace momq {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Whole-pipeline configuration document. JSON with sections model / train /
// corpus / pretrain / eval / experiment; unknown keys are rejected, every
// field can be overridden with a section.key=value assignment.
struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    int train_per_dialect = 2000;
    int test_per_dialect = 200;
    int corpus_databases = 10;
    int pretrain_steps = 2000;
    int pretrain_batch = 4;
    double pretrain_lr = 1e-3;
    int pretrain_segment_len = 128;
    int max_new = 48;
    int eval_per_dialect_cap = -1;
    int eval_threads = 0;
    std::string protocol = "full";
    int high_resource_dialect = 0;
    int low_resource_train = 128;
    std::vector<std::string> methods = {"momq", "lora"};
    bool save_checkpoints = false;

    ExperimentSettings experiment_settings() const;
};

std::string run_config_to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const std::string& text);  // rejects unknown keys
RunConfig load_run_config(const std::string& path_or_empty,
                          const std::vector<std::string>& overrides);
void echo_run_config(const RunConfig& cfg, uint64_t seed, const std::string& out_dir);

extern const char* kToolVersion;

}  // namespace momq
