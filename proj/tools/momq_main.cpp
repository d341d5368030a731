// momq command line: data generation, pretraining, fine-tuning, evaluation,
// routing inspection, and the experiment protocols.

#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "momq/config.hpp"

using namespace momq;
namespace fs = std::filesystem;

namespace {

struct CommonArgs {
    std::string config_path;
    std::vector<std::string> overrides;
    std::string out_dir;
};

void add_config_options(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "JSON run configuration")->check(CLI::ExistingFile);
    cmd->add_option("--set", args.overrides, "override a config field, e.g. --set train.alpha=0.2");
    cmd->add_option("--out", args.out_dir, "output directory")->required();
}

Corpus load_data(const std::string& dir) { return load_corpus(dir); }

Tokenizer load_tok(const std::string& dir) { return load_tokenizer(dir + "/tokenizer.json"); }

ModelConfig resolve_model_config(const RunConfig& cfg, const Tokenizer& tok) {
    ModelConfig m = cfg.model;
    m.vocab_size = tok.vocab_size();
    m.validate();
    return m;
}

void check_base_compatible(const ModelConfig& want, const Checkpoint& base) {
    if (base.config.n_layers != want.n_layers || base.config.hidden_dim != want.hidden_dim ||
        base.config.ffn_inner_dim != want.ffn_inner_dim || base.config.vocab_size != want.vocab_size ||
        base.config.max_seq_len != want.max_seq_len || base.config.n_heads != want.n_heads)
        throw ContractError("base checkpoint dimensions do not match the requested model config");
}

int cmd_make_data(const CommonArgs& args, uint64_t seed, const RunConfig& cfg) {
    Corpus corpus = generate_corpus(seed, uniform_counts(cfg.train_per_dialect, cfg.test_per_dialect),
                                    cfg.corpus_databases);
    save_corpus(corpus, args.out_dir);
    Tokenizer tok = build_tokenizer(corpus);
    save_tokenizer(tok, args.out_dir + "/tokenizer.json");
    echo_run_config(cfg, seed, args.out_dir);
    std::cout << "corpus: " << corpus.train.size() << " train / " << corpus.test.size()
              << " test samples, vocab " << tok.vocab_size() << ", databases "
              << corpus.databases.size() << "\n";
    return 0;
}

int cmd_pretrain(const CommonArgs& args, uint64_t seed, const RunConfig& cfg,
                 const std::string& data_dir) {
    Corpus corpus = load_data(data_dir);
    Tokenizer tok = load_tok(data_dir);
    ModelConfig mcfg = resolve_model_config(cfg, tok);
    PretrainResult res = pretrain_base(mcfg, corpus, cfg.pretrain_steps, seed, cfg.pretrain_batch,
                                       cfg.pretrain_lr, cfg.pretrain_segment_len);
    Rng rng(seed);
    Model model(mcfg, TrainMode::full_ft, rng);
    model.load_snapshot(res.frozen);
    save_checkpoint(model, args.out_dir, cfg.pretrain_steps);
    echo_run_config(cfg, seed, args.out_dir);
    std::ofstream metrics(args.out_dir + "/pretrain_metrics.jsonl");
    for (const auto& line : res.metrics) metrics << line << '\n';
    std::cout << "pretrained " << cfg.pretrain_steps << " steps; held-out lm loss "
              << res.heldout_loss_before << " -> " << res.heldout_loss_after << "; snapshot hash "
              << res.frozen_hash << "\n";
    return 0;
}

int cmd_train(const CommonArgs& args, uint64_t seed, RunConfig cfg, const std::string& data_dir,
              const std::string& base_dir) {
    Corpus corpus = load_data(data_dir);
    Tokenizer tok = load_tok(data_dir);
    ModelConfig mcfg = resolve_model_config(cfg, tok);
    Checkpoint base = load_checkpoint(base_dir);
    check_base_compatible(mcfg, base);

    cfg.train.seed = seed;
    Rng rng(seed);
    Model model(mcfg, cfg.train.model_mode(), base.params, rng);
    echo_run_config(cfg, seed, args.out_dir);
    train(model, corpus, tok, cfg.train, args.out_dir);
    save_checkpoint(model, args.out_dir + "/checkpoint", 0, train_config_to_json(cfg.train));
    std::cout << "trained " << cfg.train.mode << " model; checkpoint at " << args.out_dir
              << "/checkpoint\n";
    return 0;
}

int cmd_eval(const CommonArgs& args, uint64_t seed, const RunConfig& cfg, const std::string& data_dir,
             const std::string& ck_dir) {
    Corpus corpus = load_data(data_dir);
    Tokenizer tok = load_tok(data_dir);
    Checkpoint ck = load_checkpoint(ck_dir);
    Model model = model_from_checkpoint(ck, seed);

    EvalOptions opts;
    opts.max_new = cfg.max_new;
    opts.per_dialect_cap = cfg.eval_per_dialect_cap;
    opts.threads = cfg.eval_threads;
    opts.seed = seed;
    opts.dump_predictions = args.out_dir + "/predictions.jsonl";
    if (ck.train_config_json)
        opts.dispatch = train_config_from_json(*ck.train_config_json).dispatch_mode();
    std::filesystem::create_directories(args.out_dir);
    EvalReport report = evaluate(model, corpus, tok, opts);
    echo_run_config(cfg, seed, args.out_dir);
    std::ofstream js(args.out_dir + "/report.json");
    js << report.to_json() << '\n';
    std::ofstream md(args.out_dir + "/report.md");
    md << report.to_markdown();
    std::cout << report.to_markdown();
    return 0;
}

int cmd_generate(const CommonArgs& args, uint64_t seed, const RunConfig& cfg,
                 const std::string& data_dir, const std::string& ck_dir, int index,
                 const std::string& split) {
    Corpus corpus = load_data(data_dir);
    Tokenizer tok = load_tok(data_dir);
    Model model = model_from_checkpoint(load_checkpoint(ck_dir), seed);
    const auto& pool = split == "train" ? corpus.train : corpus.test;
    if (index < 0 || index >= static_cast<int>(pool.size()))
        throw ContractError("sample index out of range for split '" + split + "'");
    const DialectSample& s = pool[static_cast<size_t>(index)];

    std::vector<int64_t> prompt = tok.encode(s.prompt);
    prompt.insert(prompt.begin(), Tokenizer::kBos);
    GenerateResult gen = model.generate(prompt, cfg.max_new, Tokenizer::kEos, s.dialect);
    std::string pred = tok.decode(gen.tokens);
    PredictionScore score = score_prediction(s, pred, gen.ended, corpus);

    nlohmann::ordered_json j;
    j["dialect"] = dialect_name(s.dialect);
    j["prompt"] = s.prompt;
    j["gold_query"] = s.gold_query;
    j["prediction"] = pred;
    j["ended"] = gen.ended;
    j["executable"] = score.executable;
    j["execution_match"] = score.execution_match;
    std::cout << j.dump(2) << "\n";
    if (!args.out_dir.empty()) {
        fs::create_directories(args.out_dir);
        echo_run_config(cfg, seed, args.out_dir);
        std::ofstream out(args.out_dir + "/generation.json");
        out << j.dump(2) << '\n';
    }
    return 0;
}

int cmd_inspect(const CommonArgs& args, uint64_t seed, const RunConfig& cfg,
                const std::string& data_dir, const std::string& ck_dir, int index,
                const std::string& split) {
    Corpus corpus = load_data(data_dir);
    Tokenizer tok = load_tok(data_dir);
    Model model = model_from_checkpoint(load_checkpoint(ck_dir), seed);
    const auto& pool = split == "train" ? corpus.train : corpus.test;
    if (index < 0 || index >= static_cast<int>(pool.size()))
        throw ContractError("sample index out of range for split '" + split + "'");
    const DialectSample& s = pool[static_cast<size_t>(index)];

    std::vector<std::string> csv;
    RoutingSummary sum = inspect_routing(model, s, tok, cfg.max_new, &csv);
    echo_run_config(cfg, seed, args.out_dir);
    std::ofstream js(args.out_dir + "/routing.json");
    js << sum.to_json() << '\n';
    std::ofstream cs(args.out_dir + "/routing.csv");
    for (const auto& line : csv) cs << line << '\n';
    std::cout << "sample dialect " << dialect_name(s.dialect) << ", dominant group "
              << sum.dominant_group << " (" << dialect_name(sum.dominant_group) << ") over "
              << sum.generated_tokens << " generated tokens\n";
    return 0;
}

int cmd_experiment(const CommonArgs& args, const std::string& seeds_csv, const RunConfig& cfg) {
    std::vector<uint64_t> seeds;
    std::stringstream ss(seeds_csv);
    std::string part;
    while (std::getline(ss, part, ',')) seeds.push_back(std::stoull(part));
    if (seeds.empty()) throw ContractError("experiment: --seeds must name at least one seed");

    ProtocolSpec spec;
    spec.name = cfg.protocol;
    spec.high_resource_dialect = cfg.high_resource_dialect;
    ExperimentSettings settings = cfg.experiment_settings();
    settings.corpus_seed = seeds.front();
    echo_run_config(cfg, seeds.front(), args.out_dir);
    ExperimentResult res = run_experiment(spec, settings, seeds, args.out_dir);
    std::cout << res.markdown;
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"multi-dialect query generation with LoRA-expert routing"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kToolVersion);

    CommonArgs args;
    uint64_t seed = 0;
    std::string data_dir, base_dir, ck_dir, seeds_csv = "1", split = "test";
    int index = 0;

    auto* make_data = app.add_subcommand("make-data", "generate the four-dialect corpus");
    add_config_options(make_data, args);
    make_data->add_option("--seed", seed, "corpus seed")->required();

    auto* pretrain = app.add_subcommand("pretrain", "pretrain and freeze the dense base");
    add_config_options(pretrain, args);
    pretrain->add_option("--seed", seed)->required();
    pretrain->add_option("--data", data_dir, "corpus directory")->required();

    auto* train_cmd = app.add_subcommand("train", "fine-tune on the corpus");
    add_config_options(train_cmd, args);
    train_cmd->add_option("--seed", seed)->required();
    train_cmd->add_option("--data", data_dir)->required();
    train_cmd->add_option("--base", base_dir, "pretrained base checkpoint")->required();

    auto* eval_cmd = app.add_subcommand("eval", "EX/EXEC evaluation of a checkpoint");
    add_config_options(eval_cmd, args);
    eval_cmd->add_option("--seed", seed);
    eval_cmd->add_option("--data", data_dir)->required();
    eval_cmd->add_option("--checkpoint", ck_dir)->required();

    auto* gen_cmd = app.add_subcommand("generate", "generate a query for one sample");
    gen_cmd->add_option("--config", args.config_path)->check(CLI::ExistingFile);
    gen_cmd->add_option("--set", args.overrides);
    gen_cmd->add_option("--out", args.out_dir);
    gen_cmd->add_option("--seed", seed);
    gen_cmd->add_option("--data", data_dir)->required();
    gen_cmd->add_option("--checkpoint", ck_dir)->required();
    gen_cmd->add_option("--index", index, "sample index");
    gen_cmd->add_option("--split", split, "train or test");

    auto* inspect = app.add_subcommand("inspect-routing", "dialect/expert routing of one sample");
    add_config_options(inspect, args);
    inspect->add_option("--seed", seed);
    inspect->add_option("--data", data_dir)->required();
    inspect->add_option("--checkpoint", ck_dir)->required();
    inspect->add_option("--index", index);
    inspect->add_option("--split", split);

    std::string protocol_flag;
    auto* experiment = app.add_subcommand("experiment", "multi-seed protocol runner");
    add_config_options(experiment, args);
    experiment->add_option("--seeds", seeds_csv, "comma-separated seeds")->required();
    experiment->add_option("--protocol", protocol_flag,
                           "full | high_resource | ablation | sweep_rank | sweep_experts");

    CLI11_PARSE(app, argc, argv);

    try {
        RunConfig cfg = load_run_config(args.config_path, args.overrides);
        if (!protocol_flag.empty()) cfg.protocol = protocol_flag;
        if (make_data->parsed()) return cmd_make_data(args, seed, cfg);
        if (pretrain->parsed()) return cmd_pretrain(args, seed, cfg, data_dir);
        if (train_cmd->parsed()) return cmd_train(args, seed, cfg, data_dir, base_dir);
        if (eval_cmd->parsed()) return cmd_eval(args, seed, cfg, data_dir, ck_dir);
        if (gen_cmd->parsed()) return cmd_generate(args, seed, cfg, data_dir, ck_dir, index, split);
        if (inspect->parsed()) return cmd_inspect(args, seed, cfg, data_dir, ck_dir, index, split);
        if (experiment->parsed()) return cmd_experiment(args, seeds_csv, cfg);
    } catch (const std::exception& e) {
        const char* kind = "error";
        if (dynamic_cast<const ConfigError*>(&e)) kind = "config_error";
        else if (dynamic_cast<const CorruptionError*>(&e)) kind = "corruption_error";
        else if (dynamic_cast<const TrainError*>(&e)) kind = "train_error";
        else if (dynamic_cast<const ShapeError*>(&e)) kind = "shape_error";
        else if (dynamic_cast<const NumericError*>(&e)) kind = "numeric_error";
        else if (dynamic_cast<const ContractError*>(&e)) kind = "contract_error";
        nlohmann::ordered_json err;
        err["error"] = kind;
        err["message"] = e.what();
        std::cerr << err.dump() << "\n";
        return 1;
    }
    return 0;
}
