#pragma once

#include "momq/ops.hpp"
#include "momq/rng.hpp"
#include "momq/tensor.hpp"

namespace momq {

// Low-rank delta on top of a frozen linear map. Weights are stored
// [in, out] so application is a plain right-multiplication. down is the
// r x in factor (drawn from N(0, 1/in) at init), up is the in-to-out
// factor and starts at zero, so a fresh adapter contributes exactly
// nothing.
struct LoraAdapter {
    Tensor down;  // [in, rank]
    Tensor up;    // [rank, out]
    int64_t rank = 0;
    int64_t in_dim = 0;
    int64_t out_dim = 0;
};

LoraAdapter adapter_init(int64_t rank, int64_t in_dim, int64_t out_dim, Rng& rng);

// Returns only the low-rank delta; the caller adds it to the frozen path.
Tensor adapter_apply(const LoraAdapter& adapter, const Tensor& x, double lora_scale = 1.0);

// Frozen weight with optional adapters riding in parallel.
struct FrozenLinear {
    Tensor weight;  // [in, out], requires_grad stays false
    std::vector<LoraAdapter> adapters;
};

// frozen path plus every attached adapter delta
Tensor frozen_linear_forward(const FrozenLinear& layer, const Tensor& x, double lora_scale = 1.0);

}  // namespace momq
