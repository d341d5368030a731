#include "momq/moe.hpp"

#include <cmath>
#include <sstream>

#include <json.hpp>

namespace momq {

const std::string& dispatch_mode_name(DispatchMode m) {
    static const std::string names[3] = {"learned", "random", "oracle"};
    return names[static_cast<size_t>(m)];
}

MoeLayer make_moe_layer(int n_groups, int experts_per_group, int shared_experts, int top_k,
                        int64_t router_dim, int64_t inner_dim, int64_t out_dim, int64_t lora_rank,
                        Rng& rng) {
    if (n_groups < 1) throw ContractError("make_moe_layer: need at least one dialect group");
    if (top_k < 1 || top_k > experts_per_group)
        throw ContractError("make_moe_layer: top_k must be in [1, experts_per_group]");
    if (shared_experts < 0) throw ContractError("make_moe_layer: negative shared expert count");

    MoeLayer layer;
    layer.top_k = top_k;
    const double router_std = 1.0 / std::sqrt(static_cast<double>(router_dim));
    for (int gi = 0; gi < n_groups; ++gi) {
        DialectExpertGroup g;
        g.group_id = gi;
        g.top_k = top_k;
        for (int e = 0; e < experts_per_group; ++e)
            g.experts.push_back(adapter_init(lora_rank, inner_dim, out_dim, rng));
        std::vector<double> w(static_cast<size_t>(router_dim * experts_per_group));
        for (double& v : w) v = rng.gaussian() * router_std;
        g.router_weight =
            Tensor::from_data({router_dim, experts_per_group}, std::move(w), /*requires_grad=*/true);
        layer.groups.push_back(std::move(g));
    }
    for (int e = 0; e < shared_experts; ++e)
        layer.shared.experts.push_back(adapter_init(lora_rank, inner_dim, out_dim, rng));
    std::vector<double> w(static_cast<size_t>(router_dim * n_groups));
    for (double& v : w) v = rng.gaussian() * router_std;
    layer.dialect_router.weight =
        Tensor::from_data({router_dim, n_groups}, std::move(w), /*requires_grad=*/true);
    return layer;
}

ExpertRouting expert_route(const DialectExpertGroup& group, const Tensor& h_router) {
    ExpertRouting r;
    r.affinities = softmax(matmul(h_router, group.router_weight), 1);
    r.gates = topk_keep(r.affinities, group.top_k, &r.kept);
    return r;
}

Tensor group_output(const DialectExpertGroup& group, const Tensor& h_inner,
                    const ExpertRouting& routing, double lora_scale) {
    const int64_t rows = h_inner.dim(0);
    const int64_t n = static_cast<int64_t>(group.experts.size());
    Tensor out;
    for (int64_t k = 0; k < n; ++k) {
        std::vector<int64_t> active;
        for (int64_t t = 0; t < rows; ++t)
            if (routing.kept[static_cast<size_t>(t * n + k)]) active.push_back(t);
        if (active.empty()) continue;
        Tensor x = take_rows(h_inner, active);
        Tensor delta = adapter_apply(group.experts[static_cast<size_t>(k)], x, lora_scale);
        Tensor gate_col = reshape(slice(take_rows(routing.gates, active), 1, k, 1),
                                  {static_cast<int64_t>(active.size())});
        Tensor weighted = place_rows(row_scale(delta, gate_col), active, rows);
        out = out.defined() ? add(out, weighted) : weighted;
    }
    if (!out.defined()) out = Tensor::zeros({rows, group.experts.front().out_dim});
    return out;
}

DispatchResult dialect_dispatch(const DialectRouter& router, const Tensor& h_router,
                                DispatchMode mode, int n_groups, int64_t dialect_label,
                                Rng* random_rng) {
    DispatchResult res;
    res.logits = matmul(h_router, router.weight);
    res.probs = softmax(res.logits, 1);
    const int64_t t = h_router.dim(0);
    res.group_of_token.resize(static_cast<size_t>(t));
    switch (mode) {
        case DispatchMode::learned:
            for (int64_t i = 0; i < t; ++i) res.group_of_token[static_cast<size_t>(i)] = argmax_row(res.probs, i);
            break;
        case DispatchMode::random:
            if (!random_rng) throw ContractError("dialect_dispatch: random mode needs an rng");
            for (int64_t i = 0; i < t; ++i)
                res.group_of_token[static_cast<size_t>(i)] = random_rng->uniform_int(0, n_groups - 1);
            break;
        case DispatchMode::oracle:
            if (dialect_label < 0 || dialect_label >= n_groups)
                throw ContractError("dialect_dispatch: oracle label out of range");
            for (int64_t i = 0; i < t; ++i) res.group_of_token[static_cast<size_t>(i)] = dialect_label;
            break;
    }
    return res;
}

MoeForwardResult moe_forward(const MoeLayer& layer, int layer_index, const Tensor& inner,
                             const Tensor& h_router, DispatchMode mode, int64_t dialect_label,
                             Rng* random_rng, double lora_scale) {
    const int64_t t = inner.dim(0);
    const int n_groups = static_cast<int>(layer.groups.size());
    const int n_experts = static_cast<int>(layer.groups.front().experts.size());
    const int64_t out_dim = layer.groups.front().experts.front().out_dim;

    MoeForwardResult res;
    res.trace.layer = layer_index;
    res.trace.tokens = t;
    res.trace.n_groups = n_groups;
    res.trace.n_experts = n_experts;
    res.trace.top_k = layer.top_k;
    res.trace.mode = mode;
    res.trace.groups.resize(static_cast<size_t>(n_groups));
    res.trace.shared_experts = static_cast<int>(layer.shared.experts.size());
    res.hooks.group_affinities.resize(static_cast<size_t>(n_groups));
    res.hooks.group_tokens.resize(static_cast<size_t>(n_groups));
    res.hooks.group_counts.resize(static_cast<size_t>(n_groups));

    DispatchResult disp =
        dialect_dispatch(layer.dialect_router, h_router, mode, n_groups, dialect_label, random_rng);
    res.hooks.router_logits = disp.logits;
    res.trace.dialect_probs = disp.probs.data();
    res.trace.selected_group = disp.group_of_token;

    Tensor delta = Tensor::zeros({t, out_dim});
    for (int gi = 0; gi < n_groups; ++gi) {
        const auto& group = layer.groups[static_cast<size_t>(gi)];
        std::vector<int64_t> tokens;
        if (layer.soft_dialect_mix) {
            tokens.resize(static_cast<size_t>(t));
            for (int64_t i = 0; i < t; ++i) tokens[static_cast<size_t>(i)] = i;
        } else {
            for (int64_t i = 0; i < t; ++i)
                if (disp.group_of_token[static_cast<size_t>(i)] == gi) tokens.push_back(i);
        }
        auto& gtrace = res.trace.groups[static_cast<size_t>(gi)];
        gtrace.selection_counts.assign(static_cast<size_t>(n_experts), 0);
        if (tokens.empty()) continue;

        Tensor h_rows = take_rows(h_router, tokens);
        ExpertRouting routing = expert_route(group, h_rows);
        Tensor x_rows = take_rows(inner, tokens);
        Tensor g_out = group_output(group, x_rows, routing, lora_scale);
        if (layer.soft_dialect_mix) {
            Tensor prob_col = reshape(slice(disp.probs, 1, gi, 1), {t});
            g_out = row_scale(g_out, prob_col);
        }
        delta = add(delta, place_rows(g_out, tokens, t));

        gtrace.token_idx = tokens;
        gtrace.affinities = routing.affinities.data();
        gtrace.gates = routing.gates.data();
        for (size_t i = 0; i < routing.kept.size(); ++i)
            if (routing.kept[i]) ++gtrace.selection_counts[i % static_cast<size_t>(n_experts)];

        res.hooks.group_affinities[static_cast<size_t>(gi)] = routing.affinities;
        res.hooks.group_tokens[static_cast<size_t>(gi)] = tokens;
        res.hooks.group_counts[static_cast<size_t>(gi)] = gtrace.selection_counts;
    }

    for (const auto& expert : layer.shared.experts)
        delta = add(delta, adapter_apply(expert, inner, lora_scale));
    res.trace.shared_tokens = layer.shared.experts.empty() ? 0 : t;

    res.delta = std::move(delta);
    return res;
}

// ---------------------------------------------------------------------------
// losses
// ---------------------------------------------------------------------------

BalanceStats balance_stats_for_group(const GroupTrace& g, int n_experts, int top_k) {
    BalanceStats s;
    s.dispatch_fraction.assign(static_cast<size_t>(n_experts), 0.0);
    s.mean_affinity.assign(static_cast<size_t>(n_experts), 0.0);
    const int64_t t = static_cast<int64_t>(g.token_idx.size());
    if (t == 0) return s;
    for (int e = 0; e < n_experts; ++e)
        s.dispatch_fraction[static_cast<size_t>(e)] =
            static_cast<double>(g.selection_counts[static_cast<size_t>(e)]) /
            (static_cast<double>(top_k) * static_cast<double>(t));
    for (int64_t i = 0; i < t; ++i)
        for (int e = 0; e < n_experts; ++e)
            s.mean_affinity[static_cast<size_t>(e)] +=
                g.affinities[static_cast<size_t>(i * n_experts + e)];
    for (auto& v : s.mean_affinity) v /= static_cast<double>(t);
    return s;
}

double balance_loss(const BalanceStats& stats) {
    const size_t n = stats.dispatch_fraction.size();
    if (n == 0 || stats.mean_affinity.size() != n)
        throw ContractError("balance_loss: malformed stats");
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) acc += stats.dispatch_fraction[i] * stats.mean_affinity[i];
    return static_cast<double>(n) * acc;
}

Tensor moe_balance_loss(const std::vector<MoeLossHooks>& layers, int n_experts, int top_k) {
    Tensor total;
    int terms = 0;
    for (const auto& hooks : layers) {
        for (size_t gi = 0; gi < hooks.group_affinities.size(); ++gi) {
            const Tensor& aff = hooks.group_affinities[gi];
            if (!aff.defined()) continue;  // group received no tokens this pass
            const int64_t t = aff.dim(0);
            // P as a graph value: column means of the affinity matrix
            Tensor ones = Tensor::full({1, t}, 1.0 / static_cast<double>(t));
            Tensor p = matmul(ones, aff);  // [1, N]
            std::vector<double> f(static_cast<size_t>(n_experts));
            for (int e = 0; e < n_experts; ++e)
                f[static_cast<size_t>(e)] =
                    static_cast<double>(hooks.group_counts[gi][static_cast<size_t>(e)]) /
                    (static_cast<double>(top_k) * static_cast<double>(t));
            Tensor f_const = Tensor::from_data({1, static_cast<int64_t>(n_experts)}, std::move(f));
            Tensor term = scale(sum(mul(p, f_const)), static_cast<double>(n_experts));
            total = total.defined() ? add(total, term) : term;
            ++terms;
        }
    }
    if (terms == 0) return Tensor::scalar(0.0);
    return scale(total, 1.0 / static_cast<double>(terms));
}

std::vector<double> smoothed_targets(int64_t label, double eps, int n_groups) {
    if (eps < 0.0 || eps > 1.0) throw ContractError("smoothed_targets: eps outside [0, 1]");
    if (label < 0 || label >= n_groups) throw ContractError("smoothed_targets: label out of range");
    std::vector<double> y(static_cast<size_t>(n_groups), eps / static_cast<double>(n_groups));
    y[static_cast<size_t>(label)] += 1.0 - eps;
    return y;
}

Tensor moe_dialect_router_loss(const std::vector<MoeLossHooks>& layers, int64_t dialect_label,
                               double eps, int n_groups) {
    std::vector<double> target = smoothed_targets(dialect_label, eps, n_groups);
    Tensor total;
    int n_layers = 0;
    for (const auto& hooks : layers) {
        if (!hooks.router_logits.defined()) continue;
        const int64_t t = hooks.router_logits.dim(0);
        Tensor lsm = log_softmax(hooks.router_logits, 1);
        std::vector<double> tiled(static_cast<size_t>(t * n_groups));
        for (int64_t i = 0; i < t; ++i)
            for (int c = 0; c < n_groups; ++c)
                tiled[static_cast<size_t>(i * n_groups + c)] = target[static_cast<size_t>(c)];
        Tensor y = Tensor::from_data({t, n_groups}, std::move(tiled));
        Tensor layer_ce = scale(sum(mul(lsm, y)), -1.0 / static_cast<double>(t));
        total = total.defined() ? add(total, layer_ce) : layer_ce;
        ++n_layers;
    }
    if (n_layers == 0) return Tensor::scalar(0.0);
    return scale(total, 1.0 / static_cast<double>(n_layers));
}

// ---------------------------------------------------------------------------
// trace validation + export
// ---------------------------------------------------------------------------

void validate_trace(const RoutingTrace& trace) {
    const int m = trace.n_groups;
    const int n = trace.n_experts;
    for (int64_t i = 0; i < trace.tokens; ++i) {
        double row = 0.0;
        for (int c = 0; c < m; ++c) row += trace.dialect_probs[static_cast<size_t>(i * m + c)];
        if (std::fabs(row - 1.0) > 1e-6)
            throw ContractError("trace: dialect probability row does not sum to 1");
        if (trace.mode == DispatchMode::learned) {
            int best = 0;
            for (int c = 1; c < m; ++c)
                if (trace.dialect_probs[static_cast<size_t>(i * m + c)] >
                    trace.dialect_probs[static_cast<size_t>(i * m + best)])
                    best = c;
            if (trace.selected_group[static_cast<size_t>(i)] != best)
                throw ContractError("trace: selected group is not the argmax row");
        }
    }

    std::vector<int> seen(static_cast<size_t>(trace.tokens), 0);
    for (int gi = 0; gi < m; ++gi) {
        const auto& g = trace.groups[static_cast<size_t>(gi)];
        for (int64_t tok : g.token_idx) ++seen[static_cast<size_t>(tok)];
        const int64_t rows = static_cast<int64_t>(g.token_idx.size());
        for (int64_t r = 0; r < rows; ++r) {
            int nonzero = 0;
            for (int e = 0; e < n; ++e) {
                double gate = g.gates[static_cast<size_t>(r * n + e)];
                double aff = g.affinities[static_cast<size_t>(r * n + e)];
                if (gate != 0.0) {
                    ++nonzero;
                    if (gate != aff)
                        throw ContractError("trace: nonzero gate differs from its affinity");
                }
            }
            if (nonzero != trace.top_k)
                throw ContractError("trace: token does not activate exactly K experts");
        }
    }
    for (int64_t i = 0; i < trace.tokens; ++i)
        if (seen[static_cast<size_t>(i)] != 1)
            throw ContractError("trace: token not dispatched to exactly one group");
    if (trace.shared_experts > 0 && trace.shared_tokens != trace.tokens)
        throw ContractError("trace: shared experts did not cover every token");
}

std::string trace_to_json(const RoutingTrace& trace) {
    nlohmann::ordered_json j;
    j["layer"] = trace.layer;
    j["tokens"] = trace.tokens;
    j["n_groups"] = trace.n_groups;
    j["n_experts"] = trace.n_experts;
    j["top_k"] = trace.top_k;
    j["mode"] = dispatch_mode_name(trace.mode);
    j["dialect_probs"] = trace.dialect_probs;
    j["selected_group"] = trace.selected_group;
    j["shared_experts"] = trace.shared_experts;
    j["shared_tokens"] = trace.shared_tokens;
    j["groups"] = nlohmann::ordered_json::array();
    for (const auto& g : trace.groups) {
        nlohmann::ordered_json jg;
        jg["token_idx"] = g.token_idx;
        jg["affinities"] = g.affinities;
        jg["gates"] = g.gates;
        jg["selection_counts"] = g.selection_counts;
        j["groups"].push_back(jg);
    }
    return j.dump();
}

std::string trace_csv_header(int n_groups, int n_experts) {
    std::ostringstream os;
    os << "layer,token_index";
    for (int g = 0; g < n_groups; ++g) os << ",group_prob_" << g;
    os << ",selected_group";
    for (int e = 0; e < n_experts; ++e) os << ",expert_gate_" << e;
    return os.str();
}

std::vector<std::string> trace_csv_rows(const RoutingTrace& trace) {
    std::vector<std::string> rows;
    const int m = trace.n_groups;
    const int n = trace.n_experts;
    // gates of the token's selected group, gathered back into token order
    std::vector<double> gates(static_cast<size_t>(trace.tokens * n), 0.0);
    for (const auto& g : trace.groups) {
        for (size_t r = 0; r < g.token_idx.size(); ++r)
            for (int e = 0; e < n; ++e)
                gates[static_cast<size_t>(g.token_idx[r] * n + e)] =
                    g.gates[r * static_cast<size_t>(n) + static_cast<size_t>(e)];
    }
    for (int64_t i = 0; i < trace.tokens; ++i) {
        std::ostringstream os;
        os << trace.layer << ',' << i;
        for (int c = 0; c < m; ++c) os << ',' << trace.dialect_probs[static_cast<size_t>(i * m + c)];
        os << ',' << trace.selected_group[static_cast<size_t>(i)];
        for (int e = 0; e < n; ++e) os << ',' << gates[static_cast<size_t>(i * n + e)];
        rows.push_back(os.str());
    }
    return rows;
}

}  // namespace momq
