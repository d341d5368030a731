#include "momq/eval.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include <json.hpp>

namespace momq {

using ordered_json = nlohmann::ordered_json;

double EvalReport::avg_ex() const {
    if (per_dialect.empty()) return 0.0;
    double acc = 0.0;
    for (const auto& [d, s] : per_dialect) acc += s.ex_pct();
    return acc / static_cast<double>(per_dialect.size());
}

double EvalReport::avg_exec() const {
    if (per_dialect.empty()) return 0.0;
    double acc = 0.0;
    for (const auto& [d, s] : per_dialect) acc += s.exec_pct();
    return acc / static_cast<double>(per_dialect.size());
}

std::string EvalReport::to_json() const {
    ordered_json j;
    j["mode"] = mode;
    j["seed"] = seed;
    j["config_digest"] = config_digest;
    j["per_dialect"] = ordered_json::object();
    for (const auto& [d, s] : per_dialect) {
        ordered_json js;
        js["samples"] = s.samples;
        js["exec"] = s.exec_pct();
        js["ex"] = s.ex_pct();
        j["per_dialect"][dialect_name(d)] = js;
    }
    j["avg_ex"] = avg_ex();
    j["avg_exec"] = avg_exec();
    return j.dump();
}

std::string EvalReport::to_markdown() const {
    std::ostringstream os;
    os << "| Dialect | Samples | EX | EXEC |\n|---|---|---|---|\n";
    os.setf(std::ios::fixed);
    os.precision(2);
    for (const auto& [d, s] : per_dialect)
        os << "| " << dialect_name(d) << " | " << s.samples << " | " << s.ex_pct() << " | "
           << s.exec_pct() << " |\n";
    os << "| avg | | " << avg_ex() << " | " << avg_exec() << " |\n";
    return os.str();
}

namespace {

int effective_threads(int requested) {
    int hw = static_cast<int>(std::thread::hardware_concurrency());
    if (hw < 1) hw = 1;
    int n = requested > 0 ? requested : hw;
    if (const char* cap = std::getenv("MOMQ_THREADS")) {
        int limit = std::atoi(cap);
        if (limit > 0) n = std::min(n, limit);
    }
    return std::max(1, n);
}

struct SampleOutcome {
    int dialect = 0;
    bool executable = false;
    bool exact = false;
    bool ended = false;
    std::string prediction;
};

SampleOutcome score_sample(const Model& model, const Corpus& corpus, const Tokenizer& tok,
                           const DialectSample& s, const EvalOptions& options, Rng* dispatch_rng) {
    SampleOutcome out;
    out.dialect = s.dialect;
    std::vector<int64_t> prompt = tok.encode(s.prompt);
    prompt.insert(prompt.begin(), Tokenizer::kBos);
    GenerateResult gen =
        model.generate(prompt, options.max_new, Tokenizer::kEos, s.dialect, options.dispatch, dispatch_rng);
    if (options.validate_traces && model.mode() == TrainMode::momq) {
        ForwardResult chk = model.forward(prompt, s.dialect, options.dispatch, dispatch_rng);
        for (const auto& tr : chk.traces) validate_trace(tr);
    }
    out.prediction = tok.decode(gen.tokens);
    out.ended = gen.ended;
    PredictionScore score = score_prediction(s, out.prediction, gen.ended, corpus);
    out.executable = score.executable;
    out.exact = score.execution_match;
    return out;
}

}  // namespace

PredictionScore score_prediction(const DialectSample& sample, const std::string& predicted_query,
                                 bool generation_ended, const Corpus& corpus) {
    PredictionScore score;
    if (!generation_ended) return score;  // generation overflow counts as non-executable
    const ToyDatabase& db = corpus.db(sample.db_name);
    ExecOutcome pred_out = execute(sample.dialect, predicted_query, db);
    if (!pred_out.ok()) return score;
    score.executable = true;
    ExecOutcome gold_out = execute(sample.dialect, sample.gold_query, db);
    if (!gold_out.ok())
        throw ContractError("gold query failed during evaluation: " + sample.gold_query);
    score.execution_match = results_match(gold_out.result, pred_out.result);
    return score;
}

EvalReport evaluate(const Model& model, const Corpus& corpus, const Tokenizer& tok,
                    const EvalOptions& options) {
    std::vector<const DialectSample*> pool;
    std::map<int, int64_t> taken;
    for (const auto& s : corpus.test) {
        if (options.only_dialect >= 0 && s.dialect != options.only_dialect) continue;
        if (options.per_dialect_cap >= 0 && taken[s.dialect] >= options.per_dialect_cap) continue;
        ++taken[s.dialect];
        pool.push_back(&s);
    }

    std::vector<SampleOutcome> outcomes(pool.size());
    const int n_threads =
        std::min(effective_threads(options.threads), static_cast<int>(std::max<size_t>(pool.size(), 1)));
    auto worker = [&](int tid) {
        // random dispatch draws are per-sample-index so thread count cannot
        // change the outcome
        for (size_t i = static_cast<size_t>(tid); i < pool.size(); i += static_cast<size_t>(n_threads)) {
            Rng rng(fnv1a64("eval-dispatch", options.seed + i));
            outcomes[i] = score_sample(model, corpus, tok, *pool[i], options, &rng);
        }
    };
    if (n_threads <= 1) {
        worker(0);
    } else {
        std::vector<std::thread> threads;
        for (int t = 0; t < n_threads; ++t) threads.emplace_back(worker, t);
        for (auto& t : threads) t.join();
    }

    EvalReport report;
    report.mode = train_mode_name(model.mode());
    report.seed = options.seed;
    report.config_digest = std::to_string(fnv1a64(model_config_to_json(model.config())));
    for (const auto& o : outcomes) {
        auto& s = report.per_dialect[o.dialect];
        ++s.samples;
        s.executable += o.executable ? 1 : 0;
        s.execution_match += o.exact ? 1 : 0;
    }
    if (!options.dump_predictions.empty()) {
        std::ofstream dump(options.dump_predictions);
        for (size_t i = 0; i < pool.size(); ++i) {
            ordered_json j;
            j["dialect"] = dialect_name(pool[i]->dialect);
            j["question"] = pool[i]->question;
            j["gold"] = pool[i]->gold_query;
            j["prediction"] = outcomes[i].prediction;
            j["ended"] = outcomes[i].ended;
            j["executable"] = outcomes[i].executable;
            j["execution_match"] = outcomes[i].exact;
            dump << j.dump() << '\n';
        }
    }
    return report;
}

// ---------------------------------------------------------------------------
// Routing inspection
// ---------------------------------------------------------------------------

std::string RoutingSummary::to_json() const {
    ordered_json j;
    j["n_layers"] = n_layers;
    j["n_groups"] = n_groups;
    j["n_experts"] = n_experts;
    j["generated_tokens"] = generated_tokens;
    j["layer_group_probs"] = layer_group_probs;
    j["group_gate_mass"] = group_gate_mass;
    j["dominant_group"] = dominant_group;
    return j.dump();
}

RoutingSummary inspect_routing(const Model& model, const DialectSample& sample, const Tokenizer& tok,
                               int max_new, std::vector<std::string>* csv_rows) {
    if (model.mode() != TrainMode::momq)
        throw ContractError("inspect_routing: model is not in momq mode");
    const int L = model.config().n_layers;
    const int M = model.config().n_dialects;
    const int N = model.config().experts_per_group;

    RoutingSummary sum;
    sum.n_layers = L;
    sum.n_groups = M;
    sum.n_experts = N;
    sum.layer_group_probs.assign(static_cast<size_t>(L), std::vector<double>(static_cast<size_t>(M), 0.0));
    sum.group_gate_mass.assign(static_cast<size_t>(M), std::vector<double>(static_cast<size_t>(N), 0.0));
    std::vector<int64_t> group_hits(static_cast<size_t>(M), 0);

    std::vector<int64_t> ids = tok.encode(sample.prompt);
    ids.insert(ids.begin(), Tokenizer::kBos);
    if (csv_rows) csv_rows->push_back(trace_csv_header(M, N));

    int64_t steps = 0;
    for (int step = 0; step < max_new; ++step) {
        if (static_cast<int64_t>(ids.size()) >= model.config().max_seq_len) break;
        ForwardResult fwd = model.forward(ids, sample.dialect);
        const int64_t last = static_cast<int64_t>(ids.size()) - 1;
        for (const auto& tr : fwd.traces) {
            for (int c = 0; c < M; ++c)
                sum.layer_group_probs[static_cast<size_t>(tr.layer)][static_cast<size_t>(c)] +=
                    tr.dialect_probs[static_cast<size_t>(last * M + c)];
            const int64_t g = tr.selected_group[static_cast<size_t>(last)];
            ++group_hits[static_cast<size_t>(g)];
            const auto& gt = tr.groups[static_cast<size_t>(g)];
            for (size_t r = 0; r < gt.token_idx.size(); ++r) {
                if (gt.token_idx[r] != last) continue;
                for (int e = 0; e < N; ++e)
                    sum.group_gate_mass[static_cast<size_t>(g)][static_cast<size_t>(e)] +=
                        gt.gates[r * static_cast<size_t>(N) + static_cast<size_t>(e)];
            }
            if (csv_rows) {
                std::ostringstream os;
                os << tr.layer << ',' << steps;
                for (int c = 0; c < M; ++c)
                    os << ',' << tr.dialect_probs[static_cast<size_t>(last * M + c)];
                os << ',' << g;
                std::vector<double> gates(static_cast<size_t>(N), 0.0);
                for (size_t r = 0; r < gt.token_idx.size(); ++r)
                    if (gt.token_idx[r] == last)
                        for (int e = 0; e < N; ++e)
                            gates[static_cast<size_t>(e)] =
                                gt.gates[r * static_cast<size_t>(N) + static_cast<size_t>(e)];
                for (int e = 0; e < N; ++e) os << ',' << gates[static_cast<size_t>(e)];
                csv_rows->push_back(os.str());
            }
        }
        ++steps;
        int64_t next = argmax_row(fwd.logits, fwd.logits.dim(0) - 1);
        if (next == Tokenizer::kEos) break;
        ids.push_back(next);
    }

    sum.generated_tokens = steps;
    if (steps > 0) {
        for (auto& row : sum.layer_group_probs)
            for (auto& v : row) v /= static_cast<double>(steps);
        for (int g = 0; g < M; ++g)
            if (group_hits[static_cast<size_t>(g)] > 0)
                for (auto& v : sum.group_gate_mass[static_cast<size_t>(g)])
                    v /= static_cast<double>(group_hits[static_cast<size_t>(g)]);
        std::vector<double> overall(static_cast<size_t>(M), 0.0);
        for (const auto& row : sum.layer_group_probs)
            for (int c = 0; c < M; ++c) overall[static_cast<size_t>(c)] += row[static_cast<size_t>(c)];
        sum.dominant_group = static_cast<int>(
            std::max_element(overall.begin(), overall.end()) - overall.begin());
    }
    return sum;
}

// ---------------------------------------------------------------------------
// Experiments
// ---------------------------------------------------------------------------

const std::vector<AblationRow>& ablation_lattice() {
    static const std::vector<AblationRow> rows = {
        {"momq", true, true, true, true},
        {"-shared", false, true, true, true},
        {"-shared-drl", false, false, true, true},
        {"-shared-drl-router", false, false, false, true},
        {"lora", false, false, false, false},
    };
    return rows;
}

namespace {

struct RunPlan {
    std::string label;
    ModelConfig model;
    TrainConfig train;
    int eval_only_dialect = -1;
};

std::vector<RunPlan> plan_runs(const ProtocolSpec& spec, const ExperimentSettings& settings) {
    std::vector<RunPlan> plans;
    auto method_plan = [&](const std::string& method) {
        RunPlan p;
        p.label = method;
        p.model = settings.model;
        p.train = settings.train;
        p.train.mode = method;
        return p;
    };
    if (spec.name == "full" || spec.name == "high_resource") {
        for (const auto& m : settings.methods) {
            if (m == "full_ft_single_dialect") {
                // one model per dialect, each trained and scored on its own dialect
                for (int d = 0; d < kNumDialects; ++d) {
                    RunPlan p = method_plan(m);
                    p.train.single_dialect = d;
                    p.eval_only_dialect = d;
                    plans.push_back(p);
                }
            } else {
                plans.push_back(method_plan(m));
            }
        }
    } else if (spec.name == "ablation") {
        for (const auto& row : ablation_lattice()) {
            RunPlan p;
            p.label = row.label;
            p.model = settings.model;
            p.train = settings.train;
            if (!row.dialect_groups) {
                p.train.mode = "lora";
            } else {
                p.train.mode = "momq";
                if (!row.shared_group) p.model.shared_experts = 0;
                if (!row.drl) {
                    p.train.alpha = 0.0;
                    // hard sentence-level labels replace the learned assignment
                    p.train.dispatch = row.dialect_router ? "oracle" : "random";
                }
                if (!row.dialect_router) p.train.dispatch = "random";
            }
            plans.push_back(p);
        }
    } else if (spec.name == "sweep_rank") {
        std::vector<int64_t> grid = spec.sweep_values.empty() ? std::vector<int64_t>{4, 8, 16}
                                                              : spec.sweep_values;
        for (int64_t r : grid) {
            RunPlan p;
            p.label = "rank" + std::to_string(r);
            p.model = settings.model;
            p.model.lora_rank = r;
            p.train = settings.train;
            p.train.mode = "momq";
            plans.push_back(p);
        }
    } else if (spec.name == "sweep_experts") {
        std::vector<int64_t> grid = spec.sweep_values.empty() ? std::vector<int64_t>{2, 4, 8}
                                                              : spec.sweep_values;
        for (int64_t n : grid) {
            RunPlan p;
            p.label = "experts" + std::to_string(n);
            p.model = settings.model;
            p.model.experts_per_group = static_cast<int>(n);
            p.model.top_k = std::min(p.model.top_k, p.model.experts_per_group);
            p.train = settings.train;
            p.train.mode = "momq";
            plans.push_back(p);
        }
    } else {
        throw ContractError("unknown protocol '" + spec.name + "'");
    }
    return plans;
}

std::string aggregate_markdown(const std::string& protocol, const std::vector<RunRecord>& runs) {
    // mean over seeds per (label, dialect)
    std::vector<std::string> labels;
    for (const auto& r : runs)
        if (std::find(labels.begin(), labels.end(), r.label) == labels.end()) labels.push_back(r.label);

    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(2);
    os << "### " << protocol << " (mean over seeds)\n\n";
    os << "| Configuration |";
    for (int d = 0; d < kNumDialects; ++d) os << " " << dialect_name(d) << " EX |";
    os << " Avg EX |";
    for (int d = 0; d < kNumDialects; ++d) os << " " << dialect_name(d) << " EXEC |";
    os << " Avg EXEC |\n|---|";
    for (int i = 0; i < 2 * kNumDialects + 2; ++i) os << "---|";
    os << "\n";
    for (const auto& label : labels) {
        std::map<int, std::pair<double, int>> ex, exec;
        double avg_ex = 0.0, avg_exec = 0.0;
        int n = 0;
        for (const auto& r : runs) {
            if (r.label != label) continue;
            for (const auto& [d, s] : r.report.per_dialect) {
                ex[d].first += s.ex_pct();
                ex[d].second += 1;
                exec[d].first += s.exec_pct();
                exec[d].second += 1;
            }
            avg_ex += r.report.avg_ex();
            avg_exec += r.report.avg_exec();
            ++n;
        }
        os << "| " << label << " |";
        for (int d = 0; d < kNumDialects; ++d)
            os << " " << (ex.count(d) ? ex[d].first / ex[d].second : 0.0) << " |";
        os << " " << (n ? avg_ex / n : 0.0) << " |";
        for (int d = 0; d < kNumDialects; ++d)
            os << " " << (exec.count(d) ? exec[d].first / exec[d].second : 0.0) << " |";
        os << " " << (n ? avg_exec / n : 0.0) << " |\n";
    }
    return os.str();
}

std::string aggregate_json(const std::string& protocol, const std::vector<RunRecord>& runs) {
    ordered_json j;
    j["protocol"] = protocol;
    j["runs"] = ordered_json::array();
    for (const auto& r : runs) {
        ordered_json jr;
        jr["label"] = r.label;
        jr["seed"] = r.seed;
        jr["report"] = ordered_json::parse(r.report.to_json());
        j["runs"].push_back(jr);
    }
    return j.dump(2);
}

}  // namespace

ExperimentResult run_experiment(const ProtocolSpec& spec, const ExperimentSettings& settings,
                                const std::vector<uint64_t>& seeds, const std::string& out_dir) {
    if (seeds.empty()) throw ContractError("run_experiment: need at least one seed");
    std::vector<RunPlan> plans = plan_runs(spec, settings);

    CorpusCounts counts;
    for (int d = 0; d < kNumDialects; ++d) {
        int train_n = settings.train_per_dialect;
        if (spec.name == "high_resource" && d != spec.high_resource_dialect)
            train_n = settings.low_resource_train;
        counts[d] = {train_n, settings.test_per_dialect};
    }
    Corpus corpus = generate_corpus(settings.corpus_seed, counts, settings.corpus_databases);
    Tokenizer tok = build_tokenizer(corpus);

    ExperimentResult result;
    result.protocol = spec.name;

    for (uint64_t seed : seeds) {
        // one pretrained base per seed, shared by every configuration; sweeps
        // never change the dense dimensions so the base stays valid
        ModelConfig base_cfg = settings.model;
        base_cfg.vocab_size = tok.vocab_size();
        PretrainResult base = pretrain_base(base_cfg, corpus, settings.pretrain_steps, seed,
                                            settings.pretrain_batch, settings.pretrain_lr,
                                            settings.pretrain_segment_len);
        for (const auto& plan : plans) {
            ModelConfig mcfg = plan.model;
            mcfg.vocab_size = tok.vocab_size();
            TrainConfig tcfg = plan.train;
            tcfg.seed = seed;
            Rng rng(fnv1a64(plan.label, seed));
            Model model(mcfg, tcfg.model_mode(), base.frozen, rng);

            std::string run_dir;
            if (!out_dir.empty()) {
                run_dir = out_dir + "/" + spec.name + "/seed" + std::to_string(seed) + "/" + plan.label +
                          (plan.eval_only_dialect >= 0 ? "-" + dialect_name(plan.eval_only_dialect) : "");
                std::filesystem::create_directories(run_dir);
                std::ofstream cfg_out(run_dir + "/config.json");
                cfg_out << "{\"model\":" << model_config_to_json(mcfg)
                        << ",\"train\":" << train_config_to_json(tcfg) << "}\n";
            }
            train(model, corpus, tok, tcfg, run_dir);
            if (settings.save_checkpoints && !run_dir.empty())
                save_checkpoint(model, run_dir + "/checkpoint", 0, train_config_to_json(tcfg));

            EvalOptions eopts = settings.eval;
            eopts.seed = seed;
            eopts.dispatch = tcfg.dispatch_mode();
            eopts.only_dialect = plan.eval_only_dialect;
            EvalReport report = evaluate(model, corpus, tok, eopts);
            report.mode = plan.label;
            if (!run_dir.empty()) {
                std::ofstream rep(run_dir + "/report.json");
                rep << report.to_json() << '\n';
            }
            result.runs.push_back({plan.label, seed, report});
        }
    }

    result.markdown = aggregate_markdown(spec.name, result.runs);
    result.json = aggregate_json(spec.name, result.runs);
    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir + "/" + spec.name);
        std::ofstream md(out_dir + "/" + spec.name + "/table.md");
        md << result.markdown;
        std::ofstream js(out_dir + "/" + spec.name + "/results.json");
        js << result.json << '\n';
    }
    return result;
}

}  // namespace momq
