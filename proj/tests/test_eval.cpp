#include <doctest.h>

#include <json.hpp>

#include "momq/eval.hpp"

using namespace momq;

namespace {

struct Fixture {
    Corpus corpus;
    Tokenizer tok;
    ModelConfig cfg;
};

Fixture make_fixture(int train_n = 6, int test_n = 3) {
    Fixture f;
    f.corpus = generate_corpus(77, uniform_counts(train_n, test_n), 4);
    f.tok = build_tokenizer(f.corpus);
    f.cfg.n_layers = 2;
    f.cfg.hidden_dim = 16;
    f.cfg.n_heads = 2;
    f.cfg.vocab_size = f.tok.vocab_size();
    f.cfg.max_seq_len = 160;
    f.cfg.ffn_inner_dim = 24;
    f.cfg.n_dialects = 4;
    f.cfg.experts_per_group = 2;
    f.cfg.shared_experts = 1;
    f.cfg.top_k = 1;
    f.cfg.lora_rank = 3;
    return f;
}

}  // namespace

TEST_CASE("score_prediction") {
    Fixture f = make_fixture();

    SUBCASE("an oracle that echoes the gold scores EX and EXEC everywhere") {
        for (const auto& s : f.corpus.test) {
            auto score = score_prediction(s, s.gold_query, true, f.corpus);
            CHECK(score.executable);
            CHECK(score.execution_match);
        }
    }
    SUBCASE("gibberish is neither executable nor matching") {
        for (const auto& s : f.corpus.test) {
            auto score = score_prediction(s, "blorp blorp blorp", true, f.corpus);
            CHECK_FALSE(score.executable);
            CHECK_FALSE(score.execution_match);
        }
    }
    SUBCASE("generation overflow counts as non-executable") {
        const auto& s = f.corpus.test.front();
        auto score = score_prediction(s, s.gold_query, false, f.corpus);
        CHECK_FALSE(score.executable);
    }
    SUBCASE("executable but wrong query counts toward EXEC only") {
        for (const auto& s : f.corpus.test) {
            if (!is_sql_dialect(s.dialect)) continue;
            const auto& kw = sql_surface(s.dialect);
            const auto& db = f.corpus.db(s.db_name);
            std::string other = kw.select + " COUNT ( * ) FROM " + db.tables[0].name + " " + kw.where +
                                " " + db.tables[0].columns[1].name + " > 9999";
            auto score = score_prediction(s, other, true, f.corpus);
            if (s.gold_query == other) continue;
            CHECK(score.executable);
        }
    }
}

TEST_CASE("evaluate on an untrained model produces a coherent report") {
    Fixture f = make_fixture();
    Rng rng(3);
    Model model(f.cfg, TrainMode::momq, rng);
    EvalOptions opts;
    opts.max_new = 8;
    opts.threads = 2;
    opts.validate_traces = true;
    EvalReport rep = evaluate(model, f.corpus, f.tok, opts);

    CHECK(rep.per_dialect.size() == 4);
    int64_t total = 0;
    for (const auto& [d, s] : rep.per_dialect) {
        total += s.samples;
        CHECK(s.ex_pct() <= s.exec_pct());  // EX <= EXEC always
    }
    CHECK(total == static_cast<int64_t>(f.corpus.test.size()));
    CHECK(rep.mode == "momq");

    SUBCASE("report is deterministic across thread counts") {
        EvalOptions one;
        one.max_new = 8;
        one.threads = 1;
        EvalReport a = evaluate(model, f.corpus, f.tok, one);
        one.threads = 3;
        EvalReport b = evaluate(model, f.corpus, f.tok, one);
        CHECK(a.to_json() == b.to_json());
    }
    SUBCASE("per-dialect cap limits the pool") {
        EvalOptions capped;
        capped.max_new = 4;
        capped.per_dialect_cap = 1;
        EvalReport c = evaluate(model, f.corpus, f.tok, capped);
        for (const auto& [d, s] : c.per_dialect) CHECK(s.samples == 1);
    }
    SUBCASE("json and markdown render") {
        CHECK(rep.to_json().find("per_dialect") != std::string::npos);
        CHECK(rep.to_markdown().find("| Dialect |") != std::string::npos);
    }
}

TEST_CASE("inspect_routing") {
    Fixture f = make_fixture();
    Rng rng(9);
    Model model(f.cfg, TrainMode::momq, rng);

    SUBCASE("zero router weights give uniform group probabilities") {
        for (int li = 0; li < f.cfg.n_layers; ++li) {
            auto& w = model.param("layer" + std::to_string(li) + ".moe.dialect_router").tensor;
            std::fill(w.data().begin(), w.data().end(), 0.0);
        }
        std::vector<std::string> csv;
        RoutingSummary sum = inspect_routing(model, f.corpus.test.front(), f.tok, 6, &csv);
        REQUIRE(sum.generated_tokens > 0);
        for (const auto& row : sum.layer_group_probs) {
            double total = 0.0;
            for (double v : row) {
                CHECK(v == doctest::Approx(0.25).epsilon(1e-9));
                total += v;
            }
            CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
        }
        CHECK(csv.size() == static_cast<size_t>(sum.generated_tokens * f.cfg.n_layers + 1));
        CHECK(csv[0].rfind("layer,token_index", 0) == 0);
    }
    SUBCASE("probability rows sum to one for arbitrary routers") {
        RoutingSummary sum = inspect_routing(model, f.corpus.test.back(), f.tok, 5);
        for (const auto& row : sum.layer_group_probs) {
            double total = 0.0;
            for (double v : row) total += v;
            CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
        }
        CHECK(sum.dominant_group >= 0);
        CHECK(sum.dominant_group < 4);
        CHECK(sum.to_json().find("dominant_group") != std::string::npos);
    }
    SUBCASE("non-momq model is rejected") {
        Rng r2(10);
        Model lora(f.cfg, TrainMode::lora, r2);
        CHECK_THROWS_AS(inspect_routing(lora, f.corpus.test.front(), f.tok, 4), ContractError);
    }
}

TEST_CASE("experiment runner shapes") {
    Fixture f = make_fixture();
    ExperimentSettings settings;
    settings.model = f.cfg;
    settings.train.epochs = 1;
    settings.train.batch_size = 4;
    settings.train_per_dialect = 6;
    settings.test_per_dialect = 2;
    settings.low_resource_train = 2;
    settings.corpus_databases = 4;
    settings.corpus_seed = 77;
    settings.pretrain_steps = 0;
    settings.eval.max_new = 6;
    settings.eval.per_dialect_cap = 2;

    SUBCASE("ablation runs five configurations per seed") {
        ExperimentResult res = run_experiment({"ablation", 0, {}}, settings, {5});
        CHECK(res.runs.size() == 5);
        CHECK(res.runs[0].label == "momq");
        CHECK(res.runs[4].label == "lora");
        CHECK(res.markdown.find("momq") != std::string::npos);
        CHECK(res.markdown.find("-shared-drl-router") != std::string::npos);
        auto parsed = nlohmann::json::parse(res.json);
        CHECK(parsed.at("runs").size() == 5);
    }
    SUBCASE("full protocol runs the requested methods across seeds") {
        settings.methods = {"momq", "lora"};
        ExperimentResult res = run_experiment({"full", 0, {}}, settings, {1, 2});
        CHECK(res.runs.size() == 4);
        int momq_runs = 0;
        for (const auto& r : res.runs) momq_runs += r.label == "momq" ? 1 : 0;
        CHECK(momq_runs == 2);
    }
    SUBCASE("sweeps cover the grid") {
        ExperimentResult res = run_experiment({"sweep_rank", 0, {3, 5}}, settings, {1});
        CHECK(res.runs.size() == 2);
        CHECK(res.runs[0].label == "rank3");
        CHECK(res.runs[1].label == "rank5");
    }
}

TEST_CASE("high resource protocol shapes the corpus") {
    // observable through the per-dialect eval sample counts and run labels
    Fixture f = make_fixture();
    ExperimentSettings settings;
    settings.model = f.cfg;
    settings.train.epochs = 0;
    settings.train_per_dialect = 8;
    settings.test_per_dialect = 2;
    settings.low_resource_train = 2;
    settings.corpus_databases = 4;
    settings.corpus_seed = 31;
    settings.pretrain_steps = 0;
    settings.eval.max_new = 4;
    settings.methods = {"momq"};
    ExperimentResult res = run_experiment({"high_resource", 2, {}}, settings, {1});
    REQUIRE(res.runs.size() == 1);
    for (const auto& [d, s] : res.runs[0].report.per_dialect) CHECK(s.samples == 2);
}

TEST_CASE("single-dialect full fine-tuning trains one model per dialect") {
    Fixture f = make_fixture();
    ExperimentSettings settings;
    settings.model = f.cfg;
    settings.train.epochs = 0;
    settings.train_per_dialect = 6;
    settings.test_per_dialect = 2;
    settings.corpus_databases = 4;
    settings.corpus_seed = 77;
    settings.pretrain_steps = 0;
    settings.eval.max_new = 4;
    settings.methods = {"full_ft_single_dialect"};
    ExperimentResult res = run_experiment({"full", 0, {}}, settings, {1});
    REQUIRE(res.runs.size() == 4);
    for (int d = 0; d < 4; ++d) {
        CHECK(res.runs[static_cast<size_t>(d)].label == "full_ft_single_dialect");
        REQUIRE(res.runs[static_cast<size_t>(d)].report.per_dialect.size() == 1);
        CHECK(res.runs[static_cast<size_t>(d)].report.per_dialect.count(d) == 1);
    }
}
