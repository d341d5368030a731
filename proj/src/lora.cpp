#include "momq/lora.hpp"

#include <cmath>

namespace momq {

LoraAdapter adapter_init(int64_t rank, int64_t in_dim, int64_t out_dim, Rng& rng) {
    if (rank < 1 || rank >= std::min(in_dim, out_dim))
        throw ContractError("adapter_init: rank " + std::to_string(rank) + " must satisfy 1 <= r < min(" +
                            std::to_string(in_dim) + ", " + std::to_string(out_dim) + ")");
    LoraAdapter a;
    a.rank = rank;
    a.in_dim = in_dim;
    a.out_dim = out_dim;
    std::vector<double> down(static_cast<size_t>(in_dim * rank));
    const double std_dev = 1.0 / std::sqrt(static_cast<double>(in_dim));
    for (double& v : down) v = rng.gaussian() * std_dev;
    a.down = Tensor::from_data({in_dim, rank}, std::move(down), /*requires_grad=*/true);
    a.up = Tensor::zeros({rank, out_dim}, /*requires_grad=*/true);
    return a;
}

Tensor adapter_apply(const LoraAdapter& adapter, const Tensor& x, double lora_scale) {
    Tensor delta = matmul(matmul(x, adapter.down), adapter.up);
    if (lora_scale != 1.0) delta = scale(delta, lora_scale);
    return delta;
}

Tensor frozen_linear_forward(const FrozenLinear& layer, const Tensor& x, double lora_scale) {
    Tensor out = matmul(x, layer.weight);
    for (const auto& a : layer.adapters) out = add(out, adapter_apply(a, x, lora_scale));
    return out;
}

}  // namespace momq
