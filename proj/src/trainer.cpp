#include "momq/trainer.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

namespace momq {

using ordered_json = nlohmann::ordered_json;

TrainMode TrainConfig::model_mode() const {
    if (mode == "momq") return TrainMode::momq;
    if (mode == "lora") return TrainMode::lora;
    if (mode == "full_ft" || mode == "full_ft_single_dialect") return TrainMode::full_ft;
    throw ContractError("unknown train mode '" + mode + "'");
}

DispatchMode TrainConfig::dispatch_mode() const {
    if (dispatch == "learned") return DispatchMode::learned;
    if (dispatch == "random") return DispatchMode::random;
    if (dispatch == "oracle") return DispatchMode::oracle;
    throw ContractError("unknown dispatch mode '" + dispatch + "'");
}

void TrainConfig::validate() const {
    model_mode();
    dispatch_mode();
    if (epsilon < 0.0 || epsilon > 1.0) throw ContractError("train config: epsilon outside [0, 1]");
    if (epochs < 0) throw ContractError("train config: negative epochs");
    if (batch_size < 1) throw ContractError("train config: batch_size must be >= 1");
    if (loss_masking != "response" && loss_masking != "all")
        throw ContractError("train config: loss_masking must be response or all");
    if (mode == "full_ft_single_dialect" && (single_dialect < 0 || single_dialect >= kNumDialects))
        throw ContractError("train config: full_ft_single_dialect needs a valid single_dialect");
}

std::string train_config_to_json(const TrainConfig& cfg) {
    ordered_json j;
    j["mode"] = cfg.mode;
    j["alpha"] = cfg.alpha;
    j["lambda"] = cfg.lambda;
    j["epsilon"] = cfg.epsilon;
    j["learning_rate"] = cfg.learning_rate;
    j["beta1"] = cfg.beta1;
    j["beta2"] = cfg.beta2;
    j["weight_decay"] = cfg.weight_decay;
    j["epochs"] = cfg.epochs;
    j["batch_size"] = cfg.batch_size;
    j["seed"] = cfg.seed;
    j["loss_masking"] = cfg.loss_masking;
    j["warmup_frac"] = cfg.warmup_frac;
    j["grad_clip"] = cfg.grad_clip;
    j["dispatch"] = cfg.dispatch;
    j["single_dialect"] = cfg.single_dialect;
    j["validate_traces"] = cfg.validate_traces;
    return j.dump();
}

TrainConfig train_config_from_json(const std::string& text) {
    auto j = ordered_json::parse(text);
    TrainConfig cfg;
    cfg.mode = j.at("mode").get<std::string>();
    cfg.alpha = j.at("alpha").get<double>();
    cfg.lambda = j.at("lambda").get<double>();
    cfg.epsilon = j.at("epsilon").get<double>();
    cfg.learning_rate = j.at("learning_rate").get<double>();
    cfg.beta1 = j.at("beta1").get<double>();
    cfg.beta2 = j.at("beta2").get<double>();
    cfg.weight_decay = j.at("weight_decay").get<double>();
    cfg.epochs = j.at("epochs").get<int>();
    cfg.batch_size = j.at("batch_size").get<int>();
    cfg.seed = j.at("seed").get<uint64_t>();
    cfg.loss_masking = j.at("loss_masking").get<std::string>();
    cfg.warmup_frac = j.at("warmup_frac").get<double>();
    cfg.grad_clip = j.at("grad_clip").get<double>();
    cfg.dispatch = j.at("dispatch").get<std::string>();
    cfg.single_dialect = j.at("single_dialect").get<int>();
    cfg.validate_traces = j.at("validate_traces").get<bool>();
    return cfg;
}

// ------------------------------ optimizer ------------------------------

AdamW::AdamW(double lr, double beta1, double beta2, double weight_decay, double grad_clip)
    : lr_(lr), beta1_(beta1), beta2_(beta2), weight_decay_(weight_decay), grad_clip_(grad_clip) {}

void AdamW::step(std::vector<Parameter>& params, double lr_now, Precision precision) {
    ++t_;
    double sq_norm = 0.0;
    for (const auto& p : params) {
        if (!p.trainable || !p.tensor.has_grad()) continue;
        for (double g : p.tensor.grad()) sq_norm += g * g;
    }
    const double norm = std::sqrt(sq_norm);
    const double clip_scale = (grad_clip_ > 0.0 && norm > grad_clip_) ? grad_clip_ / norm : 1.0;

    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (auto& p : params) {
        if (!p.trainable || !p.tensor.has_grad()) continue;
        auto* node = p.tensor.node();
        auto& m = m_[node];
        auto& v = v_[node];
        if (m.empty()) {
            m.assign(p.tensor.data().size(), 0.0);
            v.assign(p.tensor.data().size(), 0.0);
        }
        const bool decay = p.tensor.ndim() >= 2 && weight_decay_ > 0.0;
        auto& data = p.tensor.data();
        const auto& grad = p.tensor.grad();
        for (size_t i = 0; i < data.size(); ++i) {
            const double g = grad[i] * clip_scale;
            m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
            v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            double update = mhat / (std::sqrt(vhat) + 1e-8);
            if (decay) update += weight_decay_ * data[i];
            data[i] = quantize_value(data[i] - lr_now * update, precision);
        }
    }
}

// ------------------------------ loss ------------------------------

EncodedSample encode_for_training(const DialectSample& sample, const Tokenizer& tok,
                                  const std::string& loss_masking) {
    std::vector<int64_t> prompt_ids = tok.encode(sample.prompt);
    std::vector<int64_t> gold_ids = tok.encode(sample.gold_query);
    std::vector<int64_t> seq;
    seq.push_back(Tokenizer::kBos);
    seq.insert(seq.end(), prompt_ids.begin(), prompt_ids.end());
    seq.insert(seq.end(), gold_ids.begin(), gold_ids.end());
    seq.push_back(Tokenizer::kEos);

    EncodedSample enc;
    const size_t len = seq.size();
    enc.inputs.assign(seq.begin(), seq.end() - 1);
    enc.targets.assign(seq.begin() + 1, seq.end());
    enc.mask.assign(len - 1, 0.0);
    const size_t response_start = 1 + prompt_ids.size();  // first gold token position in seq
    for (size_t i = 0; i + 1 < len; ++i) {
        const bool in_response = (i + 1) >= response_start;
        enc.mask[i] = (loss_masking == "all" || in_response) ? 1.0 : 0.0;
    }
    return enc;
}

std::pair<Tensor, LossBreakdown> total_loss(const std::vector<const DialectSample*>& batch,
                                            const Model& model, const Tokenizer& tok,
                                            const TrainConfig& cfg, Rng* dispatch_rng) {
    if (batch.empty()) throw ContractError("total_loss: empty batch");
    const DispatchMode dispatch = cfg.dispatch_mode();
    const bool momq = model.mode() == TrainMode::momq;

    Tensor nll_total, drl_total, bal_total;
    int64_t acc_hits = 0, acc_tokens = 0;
    for (const DialectSample* s : batch) {
        EncodedSample enc = encode_for_training(*s, tok, cfg.loss_masking);
        ForwardResult fwd = model.forward(enc.inputs, s->dialect, dispatch, dispatch_rng);
        if (cfg.validate_traces)
            for (const auto& tr : fwd.traces) validate_trace(tr);

        double masked = 0.0;
        for (double m : enc.mask) masked += m;
        Tensor lsm = log_softmax(fwd.logits, 1);
        Tensor picked = gather_cols(lsm, enc.targets);
        Tensor mask = Tensor::from_data({static_cast<int64_t>(enc.mask.size())}, enc.mask);
        Tensor nll = scale(sum(mul(picked, mask)), -1.0 / masked);
        nll_total = nll_total.defined() ? add(nll_total, nll) : nll;

        if (momq) {
            Tensor drl = moe_dialect_router_loss(fwd.hooks, s->dialect, cfg.epsilon,
                                                 model.config().n_dialects);
            Tensor bal =
                moe_balance_loss(fwd.hooks, model.config().experts_per_group, model.config().top_k);
            drl_total = drl_total.defined() ? add(drl_total, drl) : drl;
            bal_total = bal_total.defined() ? add(bal_total, bal) : bal;
            for (const auto& tr : fwd.traces) {
                for (int64_t g : tr.selected_group) {
                    acc_hits += (g == s->dialect) ? 1 : 0;
                    ++acc_tokens;
                }
            }
        }
    }

    const double inv_b = 1.0 / static_cast<double>(batch.size());
    Tensor nll = scale(nll_total, inv_b);
    LossBreakdown parts;
    parts.nll = nll.item();
    Tensor loss = nll;
    if (momq) {
        Tensor drl = scale(drl_total, inv_b);
        Tensor bal = scale(bal_total, inv_b);
        parts.drl = drl.item();
        parts.bal = bal.item();
        loss = add(loss, add(scale(drl, cfg.alpha), scale(bal, cfg.lambda)));
        parts.router_top1_acc =
            acc_tokens ? static_cast<double>(acc_hits) / static_cast<double>(acc_tokens) : 0.0;
    }
    parts.total = loss.item();
    return {loss, parts};
}

// ------------------------------ fine-tuning loop ------------------------------

namespace {

void dump_nan_batch(const std::vector<const DialectSample*>& batch, const std::string& out_dir,
                    int64_t step) {
    if (out_dir.empty()) return;
    std::filesystem::create_directories(out_dir);
    std::ofstream out(out_dir + "/nan_batch_step" + std::to_string(step) + ".jsonl");
    for (const auto* s : batch) {
        ordered_json j;
        j["dialect"] = dialect_name(s->dialect);
        j["db"] = s->db_name;
        j["prompt"] = s->prompt;
        j["gold_query"] = s->gold_query;
        out << j.dump() << '\n';
    }
}

}  // namespace

std::vector<std::string> train(Model& model, const Corpus& corpus, const Tokenizer& tok,
                               const TrainConfig& cfg, const std::string& out_dir) {
    cfg.validate();
    if (model.mode() != cfg.model_mode())
        throw ContractError("train: model mode does not match train config");

    std::vector<const DialectSample*> pool;
    for (const auto& s : corpus.train) {
        if (cfg.mode == "full_ft_single_dialect" && s.dialect != cfg.single_dialect) continue;
        pool.push_back(&s);
    }
    if (pool.empty()) throw ContractError("train: no training samples for this configuration");

    Rng rng(cfg.seed);
    Rng dispatch_rng = rng.fork("dispatch");
    AdamW opt(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.weight_decay, cfg.grad_clip);
    auto params = model.params();  // shared tensor nodes; safe to hold a copy of the registry

    const int64_t steps_per_epoch =
        (static_cast<int64_t>(pool.size()) + cfg.batch_size - 1) / cfg.batch_size;
    const int64_t total_steps = steps_per_epoch * cfg.epochs;
    const int64_t warmup_steps =
        std::max<int64_t>(1, static_cast<int64_t>(cfg.warmup_frac * static_cast<double>(total_steps)));

    std::vector<std::string> metrics;
    std::optional<std::ofstream> metrics_file;
    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        metrics_file.emplace(out_dir + "/metrics.jsonl");
    }

    int64_t step = 0;
    std::vector<Parameter> mutable_params = params;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<const DialectSample*> order = pool;
        Rng shuffle_rng = rng.fork("epoch" + std::to_string(epoch));
        shuffle_rng.shuffle(order);
        for (int64_t b = 0; b < steps_per_epoch; ++b) {
            std::vector<const DialectSample*> batch;
            for (int i = 0; i < cfg.batch_size; ++i) {
                size_t idx = static_cast<size_t>(b) * cfg.batch_size + static_cast<size_t>(i);
                if (idx < order.size()) batch.push_back(order[idx]);
            }
            if (batch.empty()) continue;

            for (auto& p : mutable_params)
                if (p.trainable) p.tensor.zero_grad();

            LossBreakdown parts;
            try {
                Graph g;
                auto [loss, lp] = total_loss(batch, model, tok, cfg, &dispatch_rng);
                parts = lp;
                if (std::isnan(parts.total)) throw NumericError("NaN loss");
                g.backward(loss);
            } catch (const NumericError& e) {
                dump_nan_batch(batch, out_dir, step);
                throw TrainError(std::string(e.what()) + " at step " + std::to_string(step) +
                                 (out_dir.empty() ? "" : "; offending batch dumped to " + out_dir));
            }

            ++step;
            double lr_now = cfg.learning_rate;
            if (step <= warmup_steps)
                lr_now *= static_cast<double>(step) / static_cast<double>(warmup_steps);
            opt.step(mutable_params, lr_now, model.config().precision);

            ordered_json j;
            j["step"] = step;
            j["nll"] = parts.nll;
            j["drl"] = parts.drl;
            j["bal"] = parts.bal;
            j["lr"] = lr_now;
            j["router_top1_acc"] = parts.router_top1_acc;
            metrics.push_back(j.dump());
            if (metrics_file) *metrics_file << metrics.back() << '\n';
        }
    }
    return metrics;
}

// ------------------------------ pretraining ------------------------------

uint64_t snapshot_hash(const ParamSnapshot& snap) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& [name, sv] : snap) {  // std::map iterates name-sorted
        h = fnv1a64(name, h);
        h = fnv1a64(sv.second.data(), sv.second.size() * sizeof(double), h);
    }
    return h;
}

PretrainResult pretrain_base(const ModelConfig& cfg, const Corpus& corpus, int steps, uint64_t seed,
                             int batch_size, double lr, int segment_len) {
    std::vector<std::string> lines = pretrain_lines(corpus);
    if (lines.empty()) throw ContractError("pretrain_base: empty corpus");

    Rng rng(seed);
    Rng init_rng = rng.fork("init");
    Model model(cfg, TrainMode::full_ft, init_rng);

    Tokenizer tok = build_tokenizer(corpus);
    if (tok.vocab_size() != cfg.vocab_size)
        throw ContractError("pretrain_base: config vocab_size does not match tokenizer");

    // one shuffled token stream, newline-joined, chopped into fixed segments
    Rng line_rng = rng.fork("lines");
    line_rng.shuffle(lines);
    std::vector<int64_t> stream;
    for (const auto& line : lines) {
        auto ids = tok.encode(line);
        stream.insert(stream.end(), ids.begin(), ids.end());
        stream.push_back(tok.id_of("\n"));
    }
    std::vector<std::vector<int64_t>> segments;
    for (size_t off = 0; off + static_cast<size_t>(segment_len) <= stream.size();
         off += static_cast<size_t>(segment_len))
        segments.emplace_back(stream.begin() + static_cast<int64_t>(off),
                              stream.begin() + static_cast<int64_t>(off) + segment_len);
    if (segments.size() < 4) throw ContractError("pretrain_base: corpus too small to segment");

    const size_t heldout = std::max<size_t>(1, segments.size() / 50);
    std::vector<std::vector<int64_t>> eval_segs(segments.end() - static_cast<int64_t>(heldout),
                                                segments.end());
    segments.resize(segments.size() - heldout);

    auto lm_loss = [&](const std::vector<int64_t>& seg) {
        std::vector<int64_t> inputs(seg.begin(), seg.end() - 1);
        std::vector<int64_t> targets(seg.begin() + 1, seg.end());
        ForwardResult fwd = model.forward(inputs, 0);
        Tensor picked = gather_cols(log_softmax(fwd.logits, 1), targets);
        return scale(sum(picked), -1.0 / static_cast<double>(targets.size()));
    };
    auto heldout_loss = [&] {
        double total = 0.0;
        for (const auto& seg : eval_segs) total += lm_loss(seg).item();
        return total / static_cast<double>(eval_segs.size());
    };

    PretrainResult res;
    res.heldout_loss_before = heldout_loss();

    AdamW opt(lr, 0.9, 0.95, 0.1, 1.0);
    auto params = model.params();
    Rng batch_rng = rng.fork("batches");
    const int warmup = std::max(1, steps / 20);
    for (int step = 1; step <= steps; ++step) {
        for (auto& p : params) p.tensor.zero_grad();
        LossBreakdown parts;
        {
            Graph g;
            Tensor loss;
            for (int b = 0; b < batch_size; ++b) {
                const auto& seg = segments[static_cast<size_t>(
                    batch_rng.uniform_int(0, static_cast<int64_t>(segments.size()) - 1))];
                Tensor one = lm_loss(seg);
                loss = loss.defined() ? add(loss, one) : one;
            }
            loss = scale(loss, 1.0 / batch_size);
            parts.total = loss.item();
            if (std::isnan(parts.total)) throw TrainError("pretrain: NaN loss at step " + std::to_string(step));
            g.backward(loss);
        }
        double lr_now = lr * (step <= warmup ? static_cast<double>(step) / warmup : 1.0);
        opt.step(params, lr_now, cfg.precision);
        if (step % 100 == 0 || step == steps) {
            ordered_json j;
            j["step"] = step;
            j["lm_loss"] = parts.total;
            j["lr"] = lr_now;
            res.metrics.push_back(j.dump());
        }
    }

    res.heldout_loss_after = steps > 0 ? heldout_loss() : res.heldout_loss_before;
    res.frozen = model.snapshot();
    res.frozen_hash = snapshot_hash(res.frozen);
    return res;
}

// ------------------------------ checkpoints ------------------------------

namespace {

void write_param_file(const std::string& path, const std::vector<double>& data, Precision precision) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    if (precision == Precision::f32) {
        std::vector<float> f(data.begin(), data.end());
        out.write(reinterpret_cast<const char*>(f.data()),
                  static_cast<std::streamsize>(f.size() * sizeof(float)));
    } else {
        out.write(reinterpret_cast<const char*>(data.data()),
                  static_cast<std::streamsize>(data.size() * sizeof(double)));
    }
}

std::vector<double> read_param_file(const std::string& path, size_t count, Precision precision) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw CorruptionError("missing parameter file " + path);
    const auto bytes = static_cast<size_t>(in.tellg());
    const size_t want = count * (precision == Precision::f32 ? sizeof(float) : sizeof(double));
    if (bytes != want) throw CorruptionError("parameter file " + path + " has unexpected size");
    in.seekg(0);
    if (precision == Precision::f32) {
        std::vector<float> f(count);
        in.read(reinterpret_cast<char*>(f.data()), static_cast<std::streamsize>(want));
        return {f.begin(), f.end()};
    }
    std::vector<double> d(count);
    in.read(reinterpret_cast<char*>(d.data()), static_cast<std::streamsize>(want));
    return d;
}

uint64_t file_bytes_hash(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CorruptionError("missing parameter file " + path);
    uint64_t h = 0xcbf29ce484222325ull;
    char buf[4096];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0)
        h = fnv1a64(buf, static_cast<size_t>(in.gcount()), h);
    return h;
}

std::string hex64(uint64_t v) {
    std::ostringstream os;
    os << "0x" << std::hex << std::setfill('0') << std::setw(16) << v;
    return os.str();
}

uint64_t parse_hex64(const std::string& s) { return std::stoull(s, nullptr, 16); }

}  // namespace

void save_checkpoint(const Model& model, const std::string& dir, int64_t step,
                     const std::string& train_config_json) {
    std::filesystem::create_directories(dir);
    const Precision precision = model.config().precision;
    ordered_json manifest;
    manifest["format"] = "momq-checkpoint-v1";
    manifest["mode"] = train_mode_name(model.mode());
    manifest["step"] = step;
    manifest["endianness"] = "little";
    manifest["dtype"] = precision == Precision::f32 ? "f32" : "f64";
    manifest["model_config"] = ordered_json::parse(model_config_to_json(model.config()));
    if (!train_config_json.empty())
        manifest["train_config"] = ordered_json::parse(train_config_json);
    manifest["frozen_hash"] = hex64(model.frozen_hash());
    manifest["snapshot_hash"] = hex64(snapshot_hash(model.snapshot()));
    manifest["params"] = ordered_json::array();
    int index = 0;
    for (const auto& p : model.params()) {
        std::ostringstream file;
        file << "p" << std::setfill('0') << std::setw(4) << index++ << ".bin";
        write_param_file(dir + "/" + file.str(), p.tensor.data(), precision);
        ordered_json jp;
        jp["name"] = p.name;
        jp["shape"] = p.tensor.shape();
        jp["trainable"] = p.trainable;
        jp["file"] = file.str();
        jp["hash"] = hex64(file_bytes_hash(dir + "/" + file.str()));
        manifest["params"].push_back(jp);
    }
    std::ofstream out(dir + "/manifest.json", std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + dir + "/manifest.json");
    out << manifest.dump(2) << '\n';
}

Checkpoint load_checkpoint(const std::string& dir) {
    std::ifstream in(dir + "/manifest.json", std::ios::binary);
    if (!in) throw CorruptionError("missing manifest in " + dir);
    ordered_json manifest = ordered_json::parse(in);
    if (manifest.at("format").get<std::string>() != "momq-checkpoint-v1")
        throw CorruptionError("unknown checkpoint format");

    Checkpoint ck;
    ck.config = model_config_from_json(manifest.at("model_config").dump());
    ck.mode = manifest.at("mode").get<std::string>();
    ck.step = manifest.at("step").get<int64_t>();
    ck.frozen_hash = parse_hex64(manifest.at("frozen_hash").get<std::string>());
    ck.snapshot_hash = parse_hex64(manifest.at("snapshot_hash").get<std::string>());
    if (manifest.contains("train_config")) ck.train_config_json = manifest["train_config"].dump();
    const Precision precision = ck.config.precision;
    for (const auto& jp : manifest.at("params")) {
        const std::string name = jp.at("name").get<std::string>();
        const Shape shape = jp.at("shape").get<Shape>();
        const std::string file = dir + "/" + jp.at("file").get<std::string>();
        if (file_bytes_hash(file) != parse_hex64(jp.at("hash").get<std::string>()))
            throw CorruptionError("checkpoint binary " + file + " does not match its manifest hash");
        ck.params[name] = {shape, read_param_file(file, static_cast<size_t>(shape_numel(shape)), precision)};
    }
    if (snapshot_hash(ck.params) != ck.snapshot_hash)
        throw CorruptionError("checkpoint snapshot hash mismatch");
    return ck;
}

Model model_from_checkpoint(const Checkpoint& ck, uint64_t seed) {
    Rng rng(seed);
    Model model(ck.config, train_mode_from_name(ck.mode), rng);
    model.load_snapshot(ck.params);
    if (model.frozen_hash() != ck.frozen_hash)
        throw CorruptionError("frozen-set hash mismatch after checkpoint load");
    return model;
}

}  // namespace momq
