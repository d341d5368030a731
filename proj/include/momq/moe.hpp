#pragma once

#include <optional>
#include <string>
#include <vector>

#include "momq/lora.hpp"
#include "momq/ops.hpp"
#include "momq/rng.hpp"

namespace momq {

// How tokens are assigned to dialect expert groups. learned is the normal
// path; random and oracle implement the ablation rows (unsupervised random
// assignment, and hard sentence-level dialect labels).
enum class DispatchMode { learned, random, oracle };
const std::string& dispatch_mode_name(DispatchMode m);

struct DialectExpertGroup {
    int group_id = 0;
    std::vector<LoraAdapter> experts;  // N low-rank experts on the down-projection
    Tensor router_weight;              // [d, N], trainable
    int top_k = 1;
};

struct SharedExpertGroup {
    std::vector<LoraAdapter> experts;  // applied to every token, no router
};

struct DialectRouter {
    Tensor weight;  // [d, M], trainable
};

// Per-layer assembly living on the FFN down-projection.
struct MoeLayer {
    std::vector<DialectExpertGroup> groups;
    SharedExpertGroup shared;
    DialectRouter dialect_router;
    int top_k = 1;
    bool soft_dialect_mix = false;  // off: hard top-1 dispatch, unscaled group output
};

MoeLayer make_moe_layer(int n_groups, int experts_per_group, int shared_experts, int top_k,
                        int64_t router_dim, int64_t inner_dim, int64_t out_dim, int64_t lora_rank,
                        Rng& rng);

// ---------------------------------------------------------------------------
// Traces: plain-data record of one layer's routing, for losses bookkeeping,
// invariant checks, and the inspect CLI.
// ---------------------------------------------------------------------------

struct GroupTrace {
    std::vector<int64_t> token_idx;         // positions dispatched to this group
    std::vector<double> affinities;         // T' x N
    std::vector<double> gates;              // T' x N, zero outside the top-K
    std::vector<int64_t> selection_counts;  // per expert
};

struct RoutingTrace {
    int layer = 0;
    int64_t tokens = 0;
    int n_groups = 0;
    int n_experts = 0;
    int top_k = 0;
    DispatchMode mode = DispatchMode::learned;
    std::vector<double> dialect_probs;    // T x M
    std::vector<int64_t> selected_group;  // T
    std::vector<GroupTrace> groups;
    int shared_experts = 0;
    int64_t shared_tokens = 0;  // tokens processed by the shared group
};

// throws ContractError when a routing invariant is violated
void validate_trace(const RoutingTrace& trace);

std::string trace_to_json(const RoutingTrace& trace);
// one CSV line per token: layer,token_index,group_probs...,selected_group,expert_gates...
std::vector<std::string> trace_csv_rows(const RoutingTrace& trace);
std::string trace_csv_header(int n_groups, int n_experts);

// ---------------------------------------------------------------------------
// Routing ops
// ---------------------------------------------------------------------------

// affinities = per-token softmax over this group's expert scores; gates keep
// the K largest affinities unchanged and zero the rest (no renormalization)
struct ExpertRouting {
    Tensor gates;
    Tensor affinities;
    std::vector<uint8_t> kept;  // T' x N selection mask
};
ExpertRouting expert_route(const DialectExpertGroup& group, const Tensor& h_router);

// weighted sum of the active experts' deltas, evaluated sparsely
Tensor group_output(const DialectExpertGroup& group, const Tensor& h_inner,
                    const ExpertRouting& routing, double lora_scale);

struct DispatchResult {
    std::vector<int64_t> group_of_token;
    Tensor probs;   // [T, M]
    Tensor logits;  // [T, M], graph-connected for the router loss
};
DispatchResult dialect_dispatch(const DialectRouter& router, const Tensor& h_router,
                                DispatchMode mode, int n_groups, int64_t dialect_label,
                                Rng* random_rng);

// graph handles feeding the auxiliary losses
struct MoeLossHooks {
    Tensor router_logits;                            // [T, M]
    std::vector<Tensor> group_affinities;            // per group, undefined when unused
    std::vector<std::vector<int64_t>> group_tokens;  // dispatched positions per group
    std::vector<std::vector<int64_t>> group_counts;  // per group selection counts
};

struct MoeForwardResult {
    Tensor delta;  // [T, out_dim]; caller adds it to the frozen down-projection
    RoutingTrace trace;
    MoeLossHooks hooks;
};

MoeForwardResult moe_forward(const MoeLayer& layer, int layer_index, const Tensor& inner,
                             const Tensor& h_router, DispatchMode mode, int64_t dialect_label,
                             Rng* random_rng, double lora_scale);

// ---------------------------------------------------------------------------
// Auxiliary losses
// ---------------------------------------------------------------------------

struct BalanceStats {
    std::vector<double> dispatch_fraction;  // f
    std::vector<double> mean_affinity;      // P
};

BalanceStats balance_stats_for_group(const GroupTrace& g, int n_experts, int top_k);

// N * sum_i f_i * P_i for one group
double balance_loss(const BalanceStats& stats);

// graph scalar: mean over (layer, group) pairs that received >= 1 token
Tensor moe_balance_loss(const std::vector<MoeLossHooks>& layers, int n_experts, int top_k);

std::vector<double> smoothed_targets(int64_t label, double eps, int n_groups);

// graph scalar: smoothed cross-entropy between router softmax and the
// smoothed dialect label, averaged over layers and tokens
Tensor moe_dialect_router_loss(const std::vector<MoeLossHooks>& layers, int64_t dialect_label,
                               double eps, int n_groups);

}  // namespace momq
