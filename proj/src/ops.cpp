#include "momq/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>

namespace momq {

namespace {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<EMat>;
using CMatMap = Eigen::Map<const EMat>;

Tensor make_result(Shape shape, std::vector<double> data) {
    quantize_buffer(data, current_precision());
    return Tensor::from_data(std::move(shape), std::move(data));
}

bool any_needs_grad(std::initializer_list<const Tensor*> ins) {
    for (const Tensor* t : ins)
        if (t->node()->needs_grad) return true;
    return false;
}

// Registers `bwd` on the current tape if anything upstream wants gradients.
void record(const char* name, std::initializer_list<const Tensor*> ins, Tensor& out,
            std::function<void()> bwd) {
    Graph* g = Graph::current();
    if (!g || !any_needs_grad(ins)) return;
    out.node()->needs_grad = true;
    TapeOp op;
    op.name = name;
    op.out = out.node_ptr();
    for (const Tensor* t : ins) op.inputs.push_back(t->node_ptr());
    op.backward = std::move(bwd);
    g->record(std::move(op));
}

void check_2d(const Tensor& t, const char* who) {
    if (t.ndim() != 2) throw ShapeError(std::string(who) + ": expected 2-d, got " + shape_str(t.shape()));
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    check_2d(a, "matmul lhs");
    check_2d(b, "matmul rhs");
    if (a.dim(1) != b.dim(0))
        throw ShapeError("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<double> out(static_cast<size_t>(m * n));
    CMatMap A(a.data().data(), m, k), B(b.data().data(), k, n);
    MatMap C(out.data(), m, n);
    C.noalias() = A * B;
    Tensor res = make_result({m, n}, std::move(out));

    Graph* g = Graph::current();
    auto an = a.node_ptr(), bn = b.node_ptr(), on = res.node_ptr();
    record("matmul", {&a, &b}, res, [g, an, bn, on, m, k, n] {
        CMatMap dC(g->find_scratch(on.get())->data(), m, n);
        if (an->needs_grad) {
            MatMap dA(g->scratch(an).data(), m, k);
            CMatMap B(bn->data.data(), k, n);
            dA.noalias() += dC * B.transpose();
        }
        if (bn->needs_grad) {
            MatMap dB(g->scratch(bn).data(), k, n);
            CMatMap A(an->data.data(), m, k);
            dB.noalias() += A.transpose() * dC;
        }
    });
    return res;
}

Tensor transpose(const Tensor& a) {
    check_2d(a, "transpose");
    const int64_t m = a.dim(0), n = a.dim(1);
    std::vector<double> out(static_cast<size_t>(m * n));
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) out[static_cast<size_t>(j * m + i)] = a.data()[static_cast<size_t>(i * n + j)];
    Tensor res = make_result({n, m}, std::move(out));

    Graph* g = Graph::current();
    auto an = a.node_ptr(), on = res.node_ptr();
    record("transpose", {&a}, res, [g, an, on, m, n] {
        const auto& dout = *g->find_scratch(on.get());
        auto& da = g->scratch(an);
        for (int64_t j = 0; j < n; ++j)
            for (int64_t i = 0; i < m; ++i)
                da[static_cast<size_t>(i * n + j)] += dout[static_cast<size_t>(j * m + i)];
    });
    return res;
}

Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw ShapeError("add: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    std::vector<double> out(a.data().size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
    Tensor res = make_result(a.shape(), std::move(out));

    Graph* g = Graph::current();
    auto an = a.node_ptr(), bn = b.node_ptr(), on = res.node_ptr();
    record("add", {&a, &b}, res, [g, an, bn, on] {
        const auto& dout = *g->find_scratch(on.get());
        if (an->needs_grad) {
            auto& da = g->scratch(an);
            for (size_t i = 0; i < dout.size(); ++i) da[i] += dout[i];
        }
        if (bn->needs_grad) {
            auto& db = g->scratch(bn);
            for (size_t i = 0; i < dout.size(); ++i) db[i] += dout[i];
        }
    });
    return res;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw ShapeError("mul: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    std::vector<double> out(a.data().size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
    Tensor res = make_result(a.shape(), std::move(out));

    Graph* g = Graph::current();
    auto an = a.node_ptr(), bn = b.node_ptr(), on = res.node_ptr();
    record("mul", {&a, &b}, res, [g, an, bn, on] {
        const auto& dout = *g->find_scratch(on.get());
        if (an->needs_grad) {
            auto& da = g->scratch(an);
            for (size_t i = 0; i < dout.size(); ++i) da[i] += dout[i] * bn->data[i];
        }
        if (bn->needs_grad) {
            auto& db = g->scratch(bn);
            for (size_t i = 0; i < dout.size(); ++i) db[i] += dout[i] * an->data[i];
        }
    });
    return res;
}

Tensor scale(const Tensor& a, double s) {
    std::vector<double> out(a.data().size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * s;
    Tensor res = make_result(a.shape(), std::move(out));

    Graph* g = Graph::current();
    auto an = a.node_ptr(), on = res.node_ptr();
    record("scale", {&a}, res, [g, an, on, s] {
        const auto& dout = *g->find_scratch(on.get());
        auto& da = g->scratch(an);
        for (size_t i = 0; i < dout.size(); ++i) da[i] += dout[i] * s;
    });
    return res;
}

Tensor silu(const Tensor& a) {
    std::vector<double> out(a.data().size());
    for (size_t i = 0; i < out.size(); ++i) {
        double x = a.data()[i];
        out[i] = x / (1.0 + std::exp(-x));
    }
    Tensor res = make_result(a.shape(), std::move(out));

    Graph* g = Graph::current();
    auto an = a.node_ptr(), on = res.node_ptr();
    record("silu", {&a}, res, [g, an, on] {
        const auto& dout = *g->find_scratch(on.get());
        auto& da = g->scratch(an);
        for (size_t i = 0; i < dout.size(); ++i) {
            double x = an->data[i];
            double sig = 1.0 / (1.0 + std::exp(-x));
            da[i] += dout[i] * sig * (1.0 + x * (1.0 - sig));
        }
    });
    return res;
}

namespace {

struct AxisView {
    int64_t slices;  // number of independent slices
    int64_t len;     // elements per slice
    int64_t stride;  // stride between consecutive slice elements
    int64_t step;    // stride between slice starts
};

AxisView axis_view(const Tensor& a, int axis, const char* who) {
    if (a.ndim() == 1) {
        if (axis != 0) throw ShapeError(std::string(who) + ": axis out of range for 1-d");
        return {1, a.dim(0), 1, 0};
    }
    if (a.ndim() == 2) {
        if (axis == 1) return {a.dim(0), a.dim(1), 1, a.dim(1)};
        if (axis == 0) return {a.dim(1), a.dim(0), a.dim(1), 1};
        throw ShapeError(std::string(who) + ": axis out of range for 2-d");
    }
    throw ShapeError(std::string(who) + ": expected 1-d or 2-d, got " + shape_str(a.shape()));
}

}  // namespace

Tensor softmax(const Tensor& a, int axis) {
    for (double v : a.data())
        if (std::isnan(v)) throw NumericError("softmax: NaN in input");
    AxisView view = axis_view(a, axis, "softmax");
    std::vector<double> out(a.data().size());
    for (int64_t s = 0; s < view.slices; ++s) {
        const int64_t base = s * view.step;
        double mx = a.data()[static_cast<size_t>(base)];
        for (int64_t i = 1; i < view.len; ++i)
            mx = std::max(mx, a.data()[static_cast<size_t>(base + i * view.stride)]);
        double total = 0.0;
        for (int64_t i = 0; i < view.len; ++i) {
            double e = std::exp(a.data()[static_cast<size_t>(base + i * view.stride)] - mx);
            out[static_cast<size_t>(base + i * view.stride)] = e;
            total += e;
        }
        for (int64_t i = 0; i < view.len; ++i)
            out[static_cast<size_t>(base + i * view.stride)] /= total;
    }
    Tensor res = make_result(a.shape(), std::move(out));

    Graph* g = Graph::current();
    auto an = a.node_ptr(), on = res.node_ptr();
    record("softmax", {&a}, res, [g, an, on, view] {
        const auto& dout = *g->find_scratch(on.get());
        auto& da = g->scratch(an);
        const auto& y = on->data;
        for (int64_t s = 0; s < view.slices; ++s) {
            const int64_t base = s * view.step;
            double dot = 0.0;
            for (int64_t i = 0; i < view.len; ++i) {
                size_t k = static_cast<size_t>(base + i * view.stride);
                dot += dout[k] * y[k];
            }
            for (int64_t i = 0; i < view.len; ++i) {
                size_t k = static_cast<size_t>(base + i * view.stride);
                da[k] += (dout[k] - dot) * y[k];
            }
        }
    });
    return res;
}

Tensor log_softmax(const Tensor& a, int axis) {
    for (double v : a.data())
        if (std::isnan(v)) throw NumericError("log_softmax: NaN in input");
    AxisView view = axis_view(a, axis, "log_softmax");
    std::vector<double> out(a.data().size());
    for (int64_t s = 0; s < view.slices; ++s) {
        const int64_t base = s * view.step;
        double mx = a.data()[static_cast<size_t>(base)];
        for (int64_t i = 1; i < view.len; ++i)
            mx = std::max(mx, a.data()[static_cast<size_t>(base + i * view.stride)]);
        double total = 0.0;
        for (int64_t i = 0; i < view.len; ++i)
            total += std::exp(a.data()[static_cast<size_t>(base + i * view.stride)] - mx);
        const double lse = mx + std::log(total);
        for (int64_t i = 0; i < view.len; ++i) {
            size_t k = static_cast<size_t>(base + i * view.stride);
            out[k] = a.data()[k] - lse;
        }
    }
    Tensor res = make_result(a.shape(), std::move(out));

    Graph* g = Graph::current();
    auto an = a.node_ptr(), on = res.node_ptr();
    record("log_softmax", {&a}, res, [g, an, on, view] {
        const auto& dout = *g->find_scratch(on.get());
        auto& da = g->scratch(an);
        const auto& lsm = on->data;
        for (int64_t s = 0; s < view.slices; ++s) {
            const int64_t base = s * view.step;
            double dsum = 0.0;
            for (int64_t i = 0; i < view.len; ++i)
                dsum += dout[static_cast<size_t>(base + i * view.stride)];
            for (int64_t i = 0; i < view.len; ++i) {
                size_t k = static_cast<size_t>(base + i * view.stride);
                da[k] += dout[k] - std::exp(lsm[k]) * dsum;
            }
        }
    });
    return res;
}

Tensor rms_norm(const Tensor& x, const Tensor& gain) {
    constexpr double kEps = 1e-6;
    if (gain.ndim() != 1) throw ShapeError("rms_norm: gain must be 1-d");
    const int64_t d = gain.dim(0);
    if (x.shape().back() != d)
        throw ShapeError("rms_norm: gain " + shape_str(gain.shape()) + " vs x " + shape_str(x.shape()));
    const int64_t rows = x.numel() / d;
    std::vector<double> out(x.data().size());
    std::vector<double> inv(static_cast<size_t>(rows));
    for (int64_t r = 0; r < rows; ++r) {
        const double* xr = x.data().data() + r * d;
        double ss = 0.0;
        for (int64_t i = 0; i < d; ++i) ss += xr[i] * xr[i];
        double rinv = 1.0 / std::sqrt(ss / static_cast<double>(d) + kEps);
        inv[static_cast<size_t>(r)] = rinv;
        for (int64_t i = 0; i < d; ++i)
            out[static_cast<size_t>(r * d + i)] = xr[i] * rinv * gain.data()[static_cast<size_t>(i)];
    }
    Tensor res = make_result(x.shape(), std::move(out));

    Graph* g = Graph::current();
    auto xn = x.node_ptr(), gn = gain.node_ptr(), on = res.node_ptr();
    record("rms_norm", {&x, &gain}, res, [g, xn, gn, on, d, rows, inv] {
        const auto& dout = *g->find_scratch(on.get());
        for (int64_t r = 0; r < rows; ++r) {
            const double* xr = xn->data.data() + r * d;
            const double* dyr = dout.data() + r * d;
            const double rinv = inv[static_cast<size_t>(r)];
            if (xn->needs_grad) {
                auto& dx = g->scratch(xn);
                double dot = 0.0;
                for (int64_t i = 0; i < d; ++i) dot += dyr[i] * gn->data[static_cast<size_t>(i)] * xr[i];
                const double c = dot * rinv * rinv / static_cast<double>(d);
                for (int64_t i = 0; i < d; ++i)
                    dx[static_cast<size_t>(r * d + i)] +=
                        rinv * (dyr[i] * gn->data[static_cast<size_t>(i)] - xr[i] * c);
            }
            if (gn->needs_grad) {
                auto& dg = g->scratch(gn);
                for (int64_t i = 0; i < d; ++i) dg[static_cast<size_t>(i)] += dyr[i] * xr[i] * rinv;
            }
        }
    });
    return res;
}

Tensor embedding(const Tensor& table, const std::vector<int64_t>& ids) {
    check_2d(table, "embedding table");
    const int64_t v = table.dim(0), d = table.dim(1);
    for (int64_t id : ids)
        if (id < 0 || id >= v)
            throw ContractError("embedding: id " + std::to_string(id) + " outside vocab of " + std::to_string(v));
    const int64_t t = static_cast<int64_t>(ids.size());
    if (t == 0) throw ShapeError("embedding: empty id list");
    std::vector<double> out(static_cast<size_t>(t * d));
    for (int64_t i = 0; i < t; ++i)
        std::copy_n(table.data().data() + ids[static_cast<size_t>(i)] * d, d, out.data() + i * d);
    Tensor res = make_result({t, d}, std::move(out));

    Graph* g = Graph::current();
    auto tn = table.node_ptr(), on = res.node_ptr();
    record("embedding", {&table}, res, [g, tn, on, ids, d] {
        const auto& dout = *g->find_scratch(on.get());
        auto& dt = g->scratch(tn);
        for (size_t i = 0; i < ids.size(); ++i) {
            double* row = dt.data() + ids[i] * d;
            const double* src = dout.data() + static_cast<int64_t>(i) * d;
            for (int64_t j = 0; j < d; ++j) row[j] += src[j];
        }
    });
    return res;
}

Tensor causal_mask_fill(const Tensor& scores) {
    check_2d(scores, "causal_mask_fill");
    if (scores.dim(0) != scores.dim(1)) throw ShapeError("causal_mask_fill: square matrix expected");
    const int64_t t = scores.dim(0);
    std::vector<double> out(scores.data());
    for (int64_t i = 0; i < t; ++i)
        for (int64_t j = i + 1; j < t; ++j) out[static_cast<size_t>(i * t + j)] = kMaskFill;
    Tensor res = make_result({t, t}, std::move(out));

    Graph* g = Graph::current();
    auto sn = scores.node_ptr(), on = res.node_ptr();
    record("causal_mask_fill", {&scores}, res, [g, sn, on, t] {
        const auto& dout = *g->find_scratch(on.get());
        auto& ds = g->scratch(sn);
        for (int64_t i = 0; i < t; ++i)
            for (int64_t j = 0; j <= i; ++j) ds[static_cast<size_t>(i * t + j)] += dout[static_cast<size_t>(i * t + j)];
    });
    return res;
}

Tensor gather_cols(const Tensor& a, const std::vector<int64_t>& ids) {
    check_2d(a, "gather_cols");
    const int64_t rows = a.dim(0), cols = a.dim(1);
    if (static_cast<int64_t>(ids.size()) != rows)
        throw ShapeError("gather_cols: need one index per row");
    std::vector<double> out(static_cast<size_t>(rows));
    for (int64_t r = 0; r < rows; ++r) {
        int64_t c = ids[static_cast<size_t>(r)];
        if (c < 0 || c >= cols) throw ContractError("gather_cols: index out of range");
        out[static_cast<size_t>(r)] = a.data()[static_cast<size_t>(r * cols + c)];
    }
    Tensor res = make_result({rows}, std::move(out));

    Graph* g = Graph::current();
    auto an = a.node_ptr(), on = res.node_ptr();
    record("gather_cols", {&a}, res, [g, an, on, ids, cols] {
        const auto& dout = *g->find_scratch(on.get());
        auto& da = g->scratch(an);
        for (size_t r = 0; r < ids.size(); ++r)
            da[r * static_cast<size_t>(cols) + static_cast<size_t>(ids[r])] += dout[r];
    });
    return res;
}

namespace {

Tensor reduce_all(const Tensor& a, bool take_mean, const char* name) {
    double total = std::accumulate(a.data().begin(), a.data().end(), 0.0);
    const double w = take_mean ? 1.0 / static_cast<double>(a.numel()) : 1.0;
    Tensor res = Tensor::from_data({1}, {quantize_value(total * w, current_precision())});

    Graph* g = Graph::current();
    auto an = a.node_ptr(), on = res.node_ptr();
    record(name, {&a}, res, [g, an, on, w] {
        const double d = (*g->find_scratch(on.get()))[0] * w;
        auto& da = g->scratch(an);
        for (double& v : da) v += d;
    });
    return res;
}

}  // namespace

Tensor sum(const Tensor& a) { return reduce_all(a, false, "sum"); }
Tensor mean(const Tensor& a) { return reduce_all(a, true, "mean"); }

Tensor concat(const std::vector<Tensor>& parts, int axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    const int64_t nd = parts[0].ndim();
    if (nd == 1) {
        if (axis != 0) throw ShapeError("concat: axis out of range for 1-d");
        int64_t total = 0;
        for (const auto& p : parts) {
            if (p.ndim() != 1) throw ShapeError("concat: rank mismatch");
            total += p.dim(0);
        }
        std::vector<double> out;
        out.reserve(static_cast<size_t>(total));
        for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
        Tensor res = make_result({total}, std::move(out));
        Graph* g = Graph::current();
        std::vector<std::shared_ptr<TensorNode>> nodes;
        std::vector<const Tensor*> ptrs;
        for (const auto& p : parts) {
            nodes.push_back(p.node_ptr());
            ptrs.push_back(&p);
        }
        auto on = res.node_ptr();
        bool need = false;
        for (const auto* p : ptrs) need = need || p->node()->needs_grad;
        if (Graph::current() && need) {
            res.node()->needs_grad = true;
            TapeOp op;
            op.name = "concat";
            op.out = on;
            op.inputs = nodes;
            op.backward = [g, nodes, on] {
                const auto& dout = *g->find_scratch(on.get());
                size_t off = 0;
                for (const auto& n : nodes) {
                    if (n->needs_grad) {
                        auto& dn = g->scratch(n);
                        for (size_t i = 0; i < dn.size(); ++i) dn[i] += dout[off + i];
                    }
                    off += n->data.size();
                }
            };
            g->record(std::move(op));
        }
        return res;
    }
    if (nd != 2 || (axis != 0 && axis != 1)) throw ShapeError("concat: expected 2-d with axis 0/1");
    int64_t rows = parts[0].dim(0), cols = parts[0].dim(1);
    std::vector<int64_t> sizes;
    int64_t total = 0;
    for (const auto& p : parts) {
        check_2d(p, "concat");
        if (axis == 0) {
            if (p.dim(1) != cols) throw ShapeError("concat: column mismatch");
            sizes.push_back(p.dim(0));
            total += p.dim(0);
        } else {
            if (p.dim(0) != rows) throw ShapeError("concat: row mismatch");
            sizes.push_back(p.dim(1));
            total += p.dim(1);
        }
    }
    Shape out_shape = axis == 0 ? Shape{total, cols} : Shape{rows, total};
    std::vector<double> out(static_cast<size_t>(shape_numel(out_shape)));
    if (axis == 0) {
        size_t off = 0;
        for (const auto& p : parts) {
            std::copy(p.data().begin(), p.data().end(), out.begin() + static_cast<int64_t>(off));
            off += p.data().size();
        }
    } else {
        int64_t col_off = 0;
        for (size_t pi = 0; pi < parts.size(); ++pi) {
            const auto& p = parts[pi];
            for (int64_t r = 0; r < rows; ++r)
                std::copy_n(p.data().data() + r * sizes[pi], sizes[pi],
                            out.data() + r * total + col_off);
            col_off += sizes[pi];
        }
    }
    Tensor res = make_result(std::move(out_shape), std::move(out));
    Graph* g = Graph::current();
    std::vector<std::shared_ptr<TensorNode>> nodes;
    bool need = false;
    for (const auto& p : parts) {
        nodes.push_back(p.node_ptr());
        need = need || p.node()->needs_grad;
    }
    if (g && need) {
        res.node()->needs_grad = true;
        auto on = res.node_ptr();
        TapeOp op;
        op.name = "concat";
        op.out = on;
        op.inputs = nodes;
        op.backward = [g, nodes, on, sizes, axis, rows, total] {
            const auto& dout = *g->find_scratch(on.get());
            if (axis == 0) {
                size_t off = 0;
                for (const auto& n : nodes) {
                    if (n->needs_grad) {
                        auto& dn = g->scratch(n);
                        for (size_t i = 0; i < dn.size(); ++i) dn[i] += dout[off + i];
                    }
                    off += n->data.size();
                }
            } else {
                int64_t col_off = 0;
                for (size_t pi = 0; pi < nodes.size(); ++pi) {
                    const auto& n = nodes[pi];
                    if (n->needs_grad) {
                        auto& dn = g->scratch(n);
                        for (int64_t r = 0; r < rows; ++r)
                            for (int64_t c = 0; c < sizes[pi]; ++c)
                                dn[static_cast<size_t>(r * sizes[pi] + c)] +=
                                    dout[static_cast<size_t>(r * total + col_off + c)];
                    }
                    col_off += sizes[pi];
                }
            }
        };
        g->record(std::move(op));
    }
    return res;
}

Tensor slice(const Tensor& a, int axis, int64_t start, int64_t len) {
    if (len <= 0) throw ShapeError("slice: non-positive length");
    if (a.ndim() == 1) {
        if (axis != 0 || start < 0 || start + len > a.dim(0)) throw ShapeError("slice: out of range");
        std::vector<double> out(a.data().begin() + start, a.data().begin() + start + len);
        Tensor res = make_result({len}, std::move(out));
        Graph* g = Graph::current();
        auto an = a.node_ptr(), on = res.node_ptr();
        record("slice", {&a}, res, [g, an, on, start, len] {
            const auto& dout = *g->find_scratch(on.get());
            auto& da = g->scratch(an);
            for (int64_t i = 0; i < len; ++i) da[static_cast<size_t>(start + i)] += dout[static_cast<size_t>(i)];
        });
        return res;
    }
    check_2d(a, "slice");
    const int64_t rows = a.dim(0), cols = a.dim(1);
    if (axis == 0) {
        if (start < 0 || start + len > rows) throw ShapeError("slice: row range");
        std::vector<double> out(a.data().begin() + start * cols, a.data().begin() + (start + len) * cols);
        Tensor res = make_result({len, cols}, std::move(out));
        Graph* g = Graph::current();
        auto an = a.node_ptr(), on = res.node_ptr();
        record("slice", {&a}, res, [g, an, on, start, len, cols] {
            const auto& dout = *g->find_scratch(on.get());
            auto& da = g->scratch(an);
            for (int64_t i = 0; i < len * cols; ++i)
                da[static_cast<size_t>(start * cols + i)] += dout[static_cast<size_t>(i)];
        });
        return res;
    }
    if (axis != 1 || start < 0 || start + len > cols) throw ShapeError("slice: column range");
    std::vector<double> out(static_cast<size_t>(rows * len));
    for (int64_t r = 0; r < rows; ++r)
        std::copy_n(a.data().data() + r * cols + start, len, out.data() + r * len);
    Tensor res = make_result({rows, len}, std::move(out));
    Graph* g = Graph::current();
    auto an = a.node_ptr(), on = res.node_ptr();
    record("slice", {&a}, res, [g, an, on, start, len, rows, cols] {
        const auto& dout = *g->find_scratch(on.get());
        auto& da = g->scratch(an);
        for (int64_t r = 0; r < rows; ++r)
            for (int64_t c = 0; c < len; ++c)
                da[static_cast<size_t>(r * cols + start + c)] += dout[static_cast<size_t>(r * len + c)];
    });
    return res;
}

Tensor row_scale(const Tensor& a, const Tensor& w) {
    check_2d(a, "row_scale");
    if (w.ndim() != 1 || w.dim(0) != a.dim(0))
        throw ShapeError("row_scale: weights " + shape_str(w.shape()) + " vs " + shape_str(a.shape()));
    const int64_t rows = a.dim(0), cols = a.dim(1);
    std::vector<double> out(a.data().size());
    for (int64_t r = 0; r < rows; ++r) {
        const double s = w.data()[static_cast<size_t>(r)];
        for (int64_t c = 0; c < cols; ++c)
            out[static_cast<size_t>(r * cols + c)] = a.data()[static_cast<size_t>(r * cols + c)] * s;
    }
    Tensor res = make_result(a.shape(), std::move(out));

    Graph* g = Graph::current();
    auto an = a.node_ptr(), wn = w.node_ptr(), on = res.node_ptr();
    record("row_scale", {&a, &w}, res, [g, an, wn, on, rows, cols] {
        const auto& dout = *g->find_scratch(on.get());
        if (an->needs_grad) {
            auto& da = g->scratch(an);
            for (int64_t r = 0; r < rows; ++r) {
                const double s = wn->data[static_cast<size_t>(r)];
                for (int64_t c = 0; c < cols; ++c)
                    da[static_cast<size_t>(r * cols + c)] += dout[static_cast<size_t>(r * cols + c)] * s;
            }
        }
        if (wn->needs_grad) {
            auto& dw = g->scratch(wn);
            for (int64_t r = 0; r < rows; ++r) {
                double dot = 0.0;
                for (int64_t c = 0; c < cols; ++c)
                    dot += dout[static_cast<size_t>(r * cols + c)] * an->data[static_cast<size_t>(r * cols + c)];
                dw[static_cast<size_t>(r)] += dot;
            }
        }
    });
    return res;
}

Tensor take_rows(const Tensor& a, const std::vector<int64_t>& idx) {
    check_2d(a, "take_rows");
    const int64_t rows = a.dim(0), cols = a.dim(1);
    for (int64_t i : idx)
        if (i < 0 || i >= rows) throw ContractError("take_rows: row index out of range");
    if (idx.empty()) throw ShapeError("take_rows: empty index list");
    std::vector<double> out(idx.size() * static_cast<size_t>(cols));
    for (size_t k = 0; k < idx.size(); ++k)
        std::copy_n(a.data().data() + idx[k] * cols, cols, out.data() + static_cast<int64_t>(k) * cols);
    Tensor res = make_result({static_cast<int64_t>(idx.size()), cols}, std::move(out));

    Graph* g = Graph::current();
    auto an = a.node_ptr(), on = res.node_ptr();
    record("take_rows", {&a}, res, [g, an, on, idx, cols] {
        const auto& dout = *g->find_scratch(on.get());
        auto& da = g->scratch(an);
        for (size_t k = 0; k < idx.size(); ++k)
            for (int64_t c = 0; c < cols; ++c)
                da[static_cast<size_t>(idx[k] * cols + c)] += dout[k * static_cast<size_t>(cols) + static_cast<size_t>(c)];
    });
    return res;
}

Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_numel(shape) != a.numel())
        throw ShapeError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
    Tensor res = Tensor::from_data(std::move(shape), a.data());

    Graph* g = Graph::current();
    auto an = a.node_ptr(), on = res.node_ptr();
    record("reshape", {&a}, res, [g, an, on] {
        const auto& dout = *g->find_scratch(on.get());
        auto& da = g->scratch(an);
        for (size_t i = 0; i < dout.size(); ++i) da[i] += dout[i];
    });
    return res;
}

Tensor place_rows(const Tensor& a, const std::vector<int64_t>& idx, int64_t rows) {
    check_2d(a, "place_rows");
    if (static_cast<int64_t>(idx.size()) != a.dim(0))
        throw ShapeError("place_rows: one target row per input row");
    const int64_t cols = a.dim(1);
    for (int64_t i : idx)
        if (i < 0 || i >= rows) throw ContractError("place_rows: row index out of range");
    std::vector<double> out(static_cast<size_t>(rows * cols), 0.0);
    for (size_t k = 0; k < idx.size(); ++k)
        for (int64_t c = 0; c < cols; ++c)
            out[static_cast<size_t>(idx[k] * cols + c)] += a.data()[k * static_cast<size_t>(cols) + static_cast<size_t>(c)];
    Tensor res = make_result({rows, cols}, std::move(out));

    Graph* g = Graph::current();
    auto an = a.node_ptr(), on = res.node_ptr();
    record("place_rows", {&a}, res, [g, an, on, idx, cols] {
        const auto& dout = *g->find_scratch(on.get());
        auto& da = g->scratch(an);
        for (size_t k = 0; k < idx.size(); ++k)
            for (int64_t c = 0; c < cols; ++c)
                da[k * static_cast<size_t>(cols) + static_cast<size_t>(c)] += dout[static_cast<size_t>(idx[k] * cols + c)];
    });
    return res;
}

Tensor topk_keep(const Tensor& a, int64_t k, std::vector<uint8_t>* kept_out) {
    check_2d(a, "topk_keep");
    const int64_t rows = a.dim(0), cols = a.dim(1);
    if (k < 1 || k > cols) throw ContractError("topk_keep: k must be in [1, cols]");
    std::vector<double> out(a.data().size(), 0.0);
    std::vector<uint8_t> kept(a.data().size(), 0);
    std::vector<int64_t> order(static_cast<size_t>(cols));
    for (int64_t r = 0; r < rows; ++r) {
        const double* row = a.data().data() + r * cols;
        std::iota(order.begin(), order.end(), 0);
        // ties resolve to the lower expert index
        std::partial_sort(order.begin(), order.begin() + k, order.end(), [row](int64_t x, int64_t y) {
            if (row[x] != row[y]) return row[x] > row[y];
            return x < y;
        });
        for (int64_t j = 0; j < k; ++j) {
            size_t pos = static_cast<size_t>(r * cols + order[static_cast<size_t>(j)]);
            out[pos] = a.data()[pos];
            kept[pos] = 1;
        }
    }
    if (kept_out) *kept_out = kept;
    Tensor res = make_result(a.shape(), std::move(out));

    Graph* g = Graph::current();
    auto an = a.node_ptr(), on = res.node_ptr();
    record("topk_keep", {&a}, res, [g, an, on, kept] {
        const auto& dout = *g->find_scratch(on.get());
        auto& da = g->scratch(an);
        for (size_t i = 0; i < dout.size(); ++i)
            if (kept[i]) da[i] += dout[i];
    });
    return res;
}

int64_t argmax_row(const Tensor& a, int64_t row) {
    check_2d(a, "argmax_row");
    const int64_t cols = a.dim(1);
    const double* r = a.data().data() + row * cols;
    int64_t best = 0;
    for (int64_t c = 1; c < cols; ++c)
        if (r[c] > r[best]) best = c;
    return best;
}

}  // namespace momq
