#include "momq/model.hpp"

#include <cmath>

#include <json.hpp>

namespace momq {

void ModelConfig::validate() const {
    if (n_layers < 1) throw ContractError("config: need at least one layer");
    if (hidden_dim % n_heads != 0) throw ContractError("config: hidden_dim must divide by n_heads");
    if (n_dialects < 1) throw ContractError("config: n_dialects must be >= 1");
    if (top_k < 1 || top_k > experts_per_group)
        throw ContractError("config: top_k must be in [1, experts_per_group]");
    if (shared_experts < 0) throw ContractError("config: shared_experts must be >= 0");
    if (vocab_size < 5) throw ContractError("config: vocab_size not set");
    if (lora_rank < 1 || lora_rank >= std::min(hidden_dim, ffn_inner_dim))
        throw ContractError("config: lora_rank out of range");
}

std::string model_config_to_json(const ModelConfig& cfg) {
    nlohmann::ordered_json j;
    j["n_layers"] = cfg.n_layers;
    j["hidden_dim"] = cfg.hidden_dim;
    j["n_heads"] = cfg.n_heads;
    j["vocab_size"] = cfg.vocab_size;
    j["max_seq_len"] = cfg.max_seq_len;
    j["ffn_inner_dim"] = cfg.ffn_inner_dim;
    j["n_dialects"] = cfg.n_dialects;
    j["experts_per_group"] = cfg.experts_per_group;
    j["shared_experts"] = cfg.shared_experts;
    j["top_k"] = cfg.top_k;
    j["lora_rank"] = cfg.lora_rank;
    j["lora_scale"] = cfg.lora_scale;
    j["soft_dialect_mix"] = cfg.soft_dialect_mix;
    j["precision"] = cfg.precision == Precision::f32 ? "f32" : "f64";
    return j.dump();
}

ModelConfig model_config_from_json(const std::string& text) {
    auto j = nlohmann::ordered_json::parse(text);
    ModelConfig cfg;
    cfg.n_layers = j.at("n_layers").get<int>();
    cfg.hidden_dim = j.at("hidden_dim").get<int64_t>();
    cfg.n_heads = j.at("n_heads").get<int>();
    cfg.vocab_size = j.at("vocab_size").get<int64_t>();
    cfg.max_seq_len = j.at("max_seq_len").get<int64_t>();
    cfg.ffn_inner_dim = j.at("ffn_inner_dim").get<int64_t>();
    cfg.n_dialects = j.at("n_dialects").get<int>();
    cfg.experts_per_group = j.at("experts_per_group").get<int>();
    cfg.shared_experts = j.at("shared_experts").get<int>();
    cfg.top_k = j.at("top_k").get<int>();
    cfg.lora_rank = j.at("lora_rank").get<int64_t>();
    cfg.lora_scale = j.at("lora_scale").get<double>();
    cfg.soft_dialect_mix = j.at("soft_dialect_mix").get<bool>();
    cfg.precision = j.at("precision").get<std::string>() == "f32" ? Precision::f32 : Precision::f64;
    return cfg;
}

const std::string& train_mode_name(TrainMode m) {
    static const std::string names[3] = {"momq", "lora", "full_ft"};
    return names[static_cast<size_t>(m)];
}

TrainMode train_mode_from_name(const std::string& name) {
    for (int i = 0; i < 3; ++i)
        if (train_mode_name(static_cast<TrainMode>(i)) == name) return static_cast<TrainMode>(i);
    throw ContractError("unknown train mode '" + name + "'");
}

namespace {

Tensor gaussian_tensor(Shape shape, double std_dev, Rng& rng, bool requires_grad) {
    std::vector<double> data(static_cast<size_t>(shape_numel(shape)));
    for (double& v : data) v = rng.gaussian() * std_dev;
    return Tensor::from_data(std::move(shape), std::move(data), requires_grad);
}

}  // namespace

Model::Model(const ModelConfig& cfg, TrainMode mode, Rng& rng) : cfg_(cfg), mode_(mode) {
    cfg_.validate();
    build(rng, nullptr);
}

Model::Model(const ModelConfig& cfg, TrainMode mode, const ParamSnapshot& base, Rng& rng)
    : cfg_(cfg), mode_(mode) {
    cfg_.validate();
    build(rng, &base);
}

void Model::build(Rng& rng, const ParamSnapshot* base) {
    const int64_t d = cfg_.hidden_dim;
    const int64_t f = cfg_.ffn_inner_dim;
    const bool adapters = mode_ != TrainMode::full_ft;
    const bool full = mode_ == TrainMode::full_ft;
    const double emb_std = 0.02;
    const double lin_std = 1.0 / std::sqrt(static_cast<double>(d));
    const double ffn_std = 1.0 / std::sqrt(static_cast<double>(f));

    // base weights come from the snapshot when given, else fresh gaussians
    auto base_weight = [&](const std::string& name, Shape shape, double std_dev,
                           bool trainable) -> Tensor {
        Tensor t;
        if (base) {
            auto it = base->find(name);
            if (it == base->end()) throw ContractError("base snapshot is missing '" + name + "'");
            if (it->second.first != shape)
                throw ShapeError("base snapshot shape mismatch for '" + name + "'");
            t = Tensor::from_data(shape, it->second.second, trainable);
        } else {
            t = gaussian_tensor(shape, std_dev, rng, trainable);
        }
        params_.push_back({name, t, trainable});
        return t;
    };
    auto base_gain = [&](const std::string& name, bool trainable) -> Tensor {
        Tensor t;
        if (base) {
            auto it = base->find(name);
            if (it == base->end()) throw ContractError("base snapshot is missing '" + name + "'");
            t = Tensor::from_data({d}, it->second.second, trainable);
        } else {
            t = Tensor::full({d}, 1.0, trainable);
        }
        params_.push_back({name, t, trainable});
        return t;
    };
    auto register_adapter = [&](const std::string& prefix, LoraAdapter& a) {
        params_.push_back({prefix + ".down", a.down, true});
        params_.push_back({prefix + ".up", a.up, true});
    };

    tok_emb_ = base_weight("tok_emb", {cfg_.vocab_size, d}, emb_std, full);
    pos_emb_ = base_weight("pos_emb", {cfg_.max_seq_len, d}, emb_std, full);

    Rng adapter_rng = rng.fork("adapters");
    for (int li = 0; li < cfg_.n_layers; ++li) {
        const std::string lp = "layer" + std::to_string(li) + ".";
        LayerBlock layer;
        layer.norm1_gain = base_gain(lp + "norm1_gain", full || mode_ == TrainMode::momq);
        for (auto [tag, lin] : {std::pair<const char*, FrozenLinear*>{"wq", &layer.attn.wq},
                                {"wk", &layer.attn.wk},
                                {"wv", &layer.attn.wv},
                                {"wo", &layer.attn.wo}}) {
            lin->weight = base_weight(lp + tag, {d, d}, lin_std, full);
            if (adapters) {
                lin->adapters.push_back(adapter_init(cfg_.lora_rank, d, d, adapter_rng));
                register_adapter(lp + tag + "_adapter", lin->adapters.back());
            }
        }
        layer.norm2_gain = base_gain(lp + "norm2_gain", full || mode_ == TrainMode::momq);
        layer.up.weight = base_weight(lp + "up", {d, f}, lin_std, full);
        if (adapters) {
            layer.up.adapters.push_back(adapter_init(cfg_.lora_rank, d, f, adapter_rng));
            register_adapter(lp + "up_adapter", layer.up.adapters.back());
        }
        layer.down.weight = base_weight(lp + "down", {f, d}, ffn_std, full);
        if (mode_ == TrainMode::lora) {
            layer.down.adapters.push_back(adapter_init(cfg_.lora_rank, f, d, adapter_rng));
            register_adapter(lp + "down_adapter", layer.down.adapters.back());
        }
        if (mode_ == TrainMode::momq) {
            layer.moe = make_moe_layer(cfg_.n_dialects, cfg_.experts_per_group, cfg_.shared_experts,
                                       cfg_.top_k, d, f, d, cfg_.lora_rank, adapter_rng);
            layer.moe->soft_dialect_mix = cfg_.soft_dialect_mix;
            const std::string mp = lp + "moe.";
            params_.push_back({mp + "dialect_router", layer.moe->dialect_router.weight, true});
            for (int gi = 0; gi < cfg_.n_dialects; ++gi) {
                auto& group = layer.moe->groups[static_cast<size_t>(gi)];
                const std::string gp = mp + "group" + std::to_string(gi) + ".";
                params_.push_back({gp + "router", group.router_weight, true});
                for (int e = 0; e < cfg_.experts_per_group; ++e)
                    register_adapter(gp + "expert" + std::to_string(e),
                                     group.experts[static_cast<size_t>(e)]);
            }
            for (int e = 0; e < cfg_.shared_experts; ++e)
                register_adapter(mp + "shared" + std::to_string(e),
                                 layer.moe->shared.experts[static_cast<size_t>(e)]);
        }
        layers_.push_back(std::move(layer));
    }
    final_norm_gain_ = base_gain("final_norm_gain", full || mode_ == TrainMode::momq);
    head_ = base_weight("head", {d, cfg_.vocab_size}, lin_std, full);

    // in f32 mode every stored parameter is representable in float
    for (auto& p : params_) quantize_buffer(p.tensor.data(), cfg_.precision);
}

Parameter& Model::param(const std::string& name) {
    for (auto& p : params_)
        if (p.name == name) return p;
    throw ContractError("no parameter named '" + name + "'");
}

std::vector<Parameter> Model::trainable_params() const {
    std::vector<Parameter> out;
    for (const auto& p : params_)
        if (p.trainable) out.push_back(p);
    return out;
}

uint64_t Model::frozen_hash() const {
    std::vector<const Parameter*> frozen;
    for (const auto& p : params_)
        if (!p.trainable) frozen.push_back(&p);
    std::sort(frozen.begin(), frozen.end(),
              [](const Parameter* a, const Parameter* b) { return a->name < b->name; });
    uint64_t h = 0xcbf29ce484222325ull;
    for (const auto* p : frozen) {
        h = fnv1a64(p->name, h);
        h = fnv1a64(p->tensor.data().data(), p->tensor.data().size() * sizeof(double), h);
    }
    return h;
}

ParamSnapshot Model::snapshot() const {
    ParamSnapshot snap;
    for (const auto& p : params_) snap[p.name] = {p.tensor.shape(), p.tensor.data()};
    return snap;
}

void Model::load_snapshot(const ParamSnapshot& snap) {
    for (auto& p : params_) {
        auto it = snap.find(p.name);
        if (it == snap.end()) throw ContractError("snapshot is missing '" + p.name + "'");
        if (it->second.first != p.tensor.shape())
            throw ShapeError("snapshot shape mismatch for '" + p.name + "'");
        p.tensor.data() = it->second.second;
        quantize_buffer(p.tensor.data(), cfg_.precision);
    }
}

Tensor Model::attention(const LayerBlock& layer, const Tensor& h) const {
    const int64_t t = h.dim(0);
    const int64_t hd = cfg_.hidden_dim / cfg_.n_heads;
    Tensor q = frozen_linear_forward(layer.attn.wq, h, cfg_.lora_scale);
    Tensor k = frozen_linear_forward(layer.attn.wk, h, cfg_.lora_scale);
    Tensor v = frozen_linear_forward(layer.attn.wv, h, cfg_.lora_scale);
    std::vector<Tensor> heads;
    for (int head = 0; head < cfg_.n_heads; ++head) {
        const int64_t off = head * hd;
        Tensor qh = slice(q, 1, off, hd);
        Tensor kh = slice(k, 1, off, hd);
        Tensor vh = slice(v, 1, off, hd);
        Tensor scores = scale(matmul(qh, transpose(kh)), 1.0 / std::sqrt(static_cast<double>(hd)));
        Tensor probs = softmax(causal_mask_fill(scores), 1);
        heads.push_back(matmul(probs, vh));
    }
    Tensor mixed = cfg_.n_heads == 1 ? heads[0] : concat(heads, 1);
    (void)t;
    return frozen_linear_forward(layer.attn.wo, mixed, cfg_.lora_scale);
}

ForwardResult Model::forward(const std::vector<int64_t>& tokens, int64_t dialect_id,
                             DispatchMode dispatch, Rng* random_rng) const {
    const int64_t t = static_cast<int64_t>(tokens.size());
    if (t == 0) throw ContractError("forward: empty token sequence");
    if (t > cfg_.max_seq_len)
        throw ContractError("forward: sequence of " + std::to_string(t) + " exceeds max_seq_len");
    if (mode_ == TrainMode::momq && dispatch == DispatchMode::oracle &&
        (dialect_id < 0 || dialect_id >= cfg_.n_dialects))
        throw ContractError("forward: oracle dispatch needs a valid dialect id");

    PrecisionScope precision(cfg_.precision);
    std::vector<int64_t> positions(static_cast<size_t>(t));
    for (int64_t i = 0; i < t; ++i) positions[static_cast<size_t>(i)] = i;

    ForwardResult res;
    Tensor x = add(embedding(tok_emb_, tokens), embedding(pos_emb_, positions));
    int layer_index = 0;
    for (const auto& layer : layers_) {
        Tensor h1 = rms_norm(x, layer.norm1_gain);
        x = add(x, attention(layer, h1));
        Tensor h2 = rms_norm(x, layer.norm2_gain);
        Tensor act = silu(frozen_linear_forward(layer.up, h2, cfg_.lora_scale));
        Tensor down = frozen_linear_forward(layer.down, act, cfg_.lora_scale);
        if (layer.moe) {
            MoeForwardResult moe = moe_forward(*layer.moe, layer_index, act, h2, dispatch, dialect_id,
                                               random_rng, cfg_.lora_scale);
            down = add(down, moe.delta);
            res.traces.push_back(std::move(moe.trace));
            res.hooks.push_back(std::move(moe.hooks));
        }
        x = add(x, down);
        ++layer_index;
    }
    res.logits = matmul(rms_norm(x, final_norm_gain_), head_);
    return res;
}

GenerateResult Model::generate(const std::vector<int64_t>& prompt, int max_new, int64_t end_token,
                               int64_t dialect_id, DispatchMode dispatch, Rng* random_rng) const {
    if (static_cast<int64_t>(prompt.size()) > cfg_.max_seq_len)
        throw ContractError("generate: prompt does not fit in context");
    GenerateResult out;
    std::vector<int64_t> ids = prompt;
    for (int step = 0; step < max_new; ++step) {
        if (static_cast<int64_t>(ids.size()) >= cfg_.max_seq_len) break;
        ForwardResult f = forward(ids, dialect_id, dispatch, random_rng);
        int64_t next = argmax_row(f.logits, f.logits.dim(0) - 1);
        if (next == end_token) {
            out.ended = true;
            break;
        }
        ids.push_back(next);
        out.tokens.push_back(next);
    }
    return out;
}

}  // namespace momq
