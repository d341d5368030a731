#pragma once

#include <vector>

#include "momq/tensor.hpp"

namespace momq {

// All ops are pure: they read inputs, produce a fresh tensor, and (when a
// Graph is recording and an input needs gradients) register a backward rule.
// Shapes are validated eagerly; mismatches throw ShapeError.

Tensor matmul(const Tensor& a, const Tensor& b);           // [m,k] x [k,n] -> [m,n]
Tensor transpose(const Tensor& a);                         // [m,n] -> [n,m]
Tensor add(const Tensor& a, const Tensor& b);              // same shape
Tensor mul(const Tensor& a, const Tensor& b);              // elementwise
Tensor scale(const Tensor& a, double s);
Tensor silu(const Tensor& a);
Tensor softmax(const Tensor& a, int axis);                 // 1-d or 2-d
Tensor log_softmax(const Tensor& a, int axis);
Tensor rms_norm(const Tensor& x, const Tensor& gain);      // gain matches last dim
Tensor embedding(const Tensor& table, const std::vector<int64_t>& ids);
Tensor causal_mask_fill(const Tensor& scores);             // [T,T], j > i filled with -1e30
Tensor gather_cols(const Tensor& a, const std::vector<int64_t>& ids);  // out[t] = a[t, ids[t]]
Tensor sum(const Tensor& a);                               // scalar
Tensor mean(const Tensor& a);                              // scalar
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& a, int axis, int64_t start, int64_t len);
Tensor row_scale(const Tensor& a, const Tensor& w);        // [m,n] rows scaled by w[m]
Tensor take_rows(const Tensor& a, const std::vector<int64_t>& idx);
Tensor reshape(const Tensor& a, Shape shape);                // same element count
Tensor place_rows(const Tensor& a, const std::vector<int64_t>& idx, int64_t rows);
// per row: keep the k largest (ties -> lower index), zero the rest; gradient
// flows only through kept entries. kept_out, when given, receives the mask.
Tensor topk_keep(const Tensor& a, int64_t k, std::vector<uint8_t>* kept_out = nullptr);

// plain helpers (not recorded)
int64_t argmax_row(const Tensor& a, int64_t row);
constexpr double kMaskFill = -1e30;

}  // namespace momq
