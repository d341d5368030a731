#include "momq/config.hpp"

#include <filesystem>
#include <fstream>
#include <set>

#include <json.hpp>

namespace momq {

using ordered_json = nlohmann::ordered_json;

const char* kToolVersion = "momq 0.1.0";

ExperimentSettings RunConfig::experiment_settings() const {
    ExperimentSettings s;
    s.model = model;
    s.train = train;
    s.train_per_dialect = train_per_dialect;
    s.test_per_dialect = test_per_dialect;
    s.low_resource_train = low_resource_train;
    s.corpus_databases = corpus_databases;
    s.pretrain_steps = pretrain_steps;
    s.pretrain_batch = pretrain_batch;
    s.pretrain_lr = pretrain_lr;
    s.pretrain_segment_len = pretrain_segment_len;
    s.eval.max_new = max_new;
    s.eval.per_dialect_cap = eval_per_dialect_cap;
    s.eval.threads = eval_threads;
    s.methods = methods;
    s.save_checkpoints = save_checkpoints;
    return s;
}

namespace {

ordered_json defaults_json() {
    RunConfig d;
    return ordered_json::parse(run_config_to_json(d));
}

void check_known_keys(const ordered_json& doc, const ordered_json& schema, const std::string& where) {
    for (const auto& [key, value] : doc.items()) {
        if (!schema.contains(key))
            throw ConfigError("unknown config key '" + (where.empty() ? key : where + "." + key) + "'");
        if (value.is_object() && schema.at(key).is_object())
            check_known_keys(value, schema.at(key), where.empty() ? key : where + "." + key);
    }
}

void deep_merge(ordered_json& base, const ordered_json& overlay) {
    for (const auto& [key, value] : overlay.items()) {
        if (value.is_object() && base.contains(key) && base.at(key).is_object())
            deep_merge(base.at(key), value);
        else
            base[key] = value;
    }
}

ordered_json parse_override_value(const std::string& raw) {
    // numbers, booleans, arrays parse as JSON; anything else is a string
    auto parsed = ordered_json::parse(raw, nullptr, false);
    if (!parsed.is_discarded()) return parsed;
    return ordered_json(raw);
}

}  // namespace

std::string run_config_to_json(const RunConfig& cfg) {
    ordered_json j;
    j["model"] = ordered_json::parse(model_config_to_json(cfg.model));
    j["model"].erase("vocab_size");  // always derived from the tokenizer
    j["train"] = ordered_json::parse(train_config_to_json(cfg.train));
    j["corpus"] = {{"train_per_dialect", cfg.train_per_dialect},
                   {"test_per_dialect", cfg.test_per_dialect},
                   {"databases", cfg.corpus_databases}};
    j["pretrain"] = {{"steps", cfg.pretrain_steps},
                     {"batch_size", cfg.pretrain_batch},
                     {"learning_rate", cfg.pretrain_lr},
                     {"segment_len", cfg.pretrain_segment_len}};
    j["eval"] = {{"max_new", cfg.max_new},
                 {"per_dialect_cap", cfg.eval_per_dialect_cap},
                 {"threads", cfg.eval_threads}};
    j["experiment"] = {{"protocol", cfg.protocol},
                       {"high_resource_dialect", cfg.high_resource_dialect},
                       {"low_resource_train", cfg.low_resource_train},
                       {"methods", cfg.methods},
                       {"save_checkpoints", cfg.save_checkpoints}};
    return j.dump(2);
}

RunConfig run_config_from_json(const std::string& text) {
    ordered_json doc = ordered_json::parse(text);
    ordered_json schema = defaults_json();
    schema["seed"] = 0;             // present in echoed run configs
    schema["tool_version"] = "";
    check_known_keys(doc, schema, "");
    ordered_json merged = schema;
    deep_merge(merged, doc);

    RunConfig cfg;
    ordered_json jm = merged.at("model");
    jm["vocab_size"] = 1000;  // placeholder; validated against the tokenizer at use
    cfg.model = model_config_from_json(jm.dump());
    cfg.model.vocab_size = 0;
    cfg.train = train_config_from_json(merged.at("train").dump());
    cfg.train_per_dialect = merged.at("corpus").at("train_per_dialect").get<int>();
    cfg.test_per_dialect = merged.at("corpus").at("test_per_dialect").get<int>();
    cfg.corpus_databases = merged.at("corpus").at("databases").get<int>();
    cfg.pretrain_steps = merged.at("pretrain").at("steps").get<int>();
    cfg.pretrain_batch = merged.at("pretrain").at("batch_size").get<int>();
    cfg.pretrain_lr = merged.at("pretrain").at("learning_rate").get<double>();
    cfg.pretrain_segment_len = merged.at("pretrain").at("segment_len").get<int>();
    cfg.max_new = merged.at("eval").at("max_new").get<int>();
    cfg.eval_per_dialect_cap = merged.at("eval").at("per_dialect_cap").get<int>();
    cfg.eval_threads = merged.at("eval").at("threads").get<int>();
    cfg.protocol = merged.at("experiment").at("protocol").get<std::string>();
    cfg.high_resource_dialect = merged.at("experiment").at("high_resource_dialect").get<int>();
    cfg.low_resource_train = merged.at("experiment").at("low_resource_train").get<int>();
    cfg.methods = merged.at("experiment").at("methods").get<std::vector<std::string>>();
    cfg.save_checkpoints = merged.at("experiment").at("save_checkpoints").get<bool>();

    cfg.train.validate();
    if (cfg.train_per_dialect < 0 || cfg.test_per_dialect < 0)
        throw ConfigError("corpus counts must be >= 0");
    return cfg;
}

RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides) {
    ordered_json doc = ordered_json::object();
    if (!path.empty()) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot read config file " + path);
        doc = ordered_json::parse(in);
    }
    for (const auto& assignment : overrides) {
        auto eq = assignment.find('=');
        if (eq == std::string::npos)
            throw ConfigError("override '" + assignment + "' is not of the form section.key=value");
        const std::string keypath = assignment.substr(0, eq);
        ordered_json value = parse_override_value(assignment.substr(eq + 1));
        ordered_json* cursor = &doc;
        size_t start = 0;
        while (true) {
            auto dot = keypath.find('.', start);
            std::string part = keypath.substr(start, dot == std::string::npos ? dot : dot - start);
            if (part.empty()) throw ConfigError("bad override key '" + keypath + "'");
            if (dot == std::string::npos) {
                (*cursor)[part] = value;
                break;
            }
            cursor = &(*cursor)[part];
            start = dot + 1;
        }
    }
    return run_config_from_json(doc.dump());
}

void echo_run_config(const RunConfig& cfg, uint64_t seed, const std::string& out_dir) {
    std::filesystem::create_directories(out_dir);
    ordered_json j = ordered_json::parse(run_config_to_json(cfg));
    j["seed"] = seed;
    j["tool_version"] = kToolVersion;
    std::ofstream out(out_dir + "/run_config.json");
    if (!out) throw ConfigError("cannot write " + out_dir + "/run_config.json");
    out << j.dump(2) << '\n';
}

}  // namespace momq
