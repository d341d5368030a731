#include "momq/tensor.hpp"

#include <atomic>
#include <sstream>

namespace momq {

int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) {
        if (d <= 0) throw ShapeError("shape dimensions must be positive, got " + shape_str(s));
        n *= d;
    }
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) os << "x";
        os << s[i];
    }
    os << "]";
    return os.str();
}

namespace {
thread_local Precision t_precision = Precision::f64;
std::atomic<uint64_t> g_node_counter{1};

std::shared_ptr<TensorNode> make_node(Shape shape, std::vector<double> data, bool requires_grad) {
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    n->requires_grad = requires_grad;
    n->needs_grad = requires_grad;
    n->id = g_node_counter.fetch_add(1, std::memory_order_relaxed);
    return n;
}
}  // namespace

Precision current_precision() { return t_precision; }

PrecisionScope::PrecisionScope(Precision p) : prev_(t_precision) { t_precision = p; }
PrecisionScope::~PrecisionScope() { t_precision = prev_; }

double quantize_value(double v, Precision p) {
    return p == Precision::f32 ? static_cast<double>(static_cast<float>(v)) : v;
}

void quantize_buffer(std::vector<double>& buf, Precision p) {
    if (p != Precision::f32) return;
    for (double& v : buf) v = static_cast<double>(static_cast<float>(v));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    int64_t n = shape_numel(shape);
    return Tensor(make_node(std::move(shape), std::vector<double>(static_cast<size_t>(n), 0.0),
                            requires_grad));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    int64_t n = shape_numel(shape);
    return Tensor(make_node(std::move(shape),
                            std::vector<double>(static_cast<size_t>(n), value), requires_grad));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
    if (shape_numel(shape) != static_cast<int64_t>(data.size()))
        throw ShapeError("from_data: " + shape_str(shape) + " does not hold " +
                         std::to_string(data.size()) + " values");
    return Tensor(make_node(std::move(shape), std::move(data), requires_grad));
}

Tensor Tensor::scalar(double value) { return from_data({1}, {value}); }

double Tensor::item() const {
    if (numel() != 1) throw ContractError("item: tensor has " + std::to_string(numel()) + " elements");
    return node_->data[0];
}

double Tensor::at(int64_t r, int64_t c) const {
    if (ndim() != 2) throw ShapeError("at(r,c) needs a 2-d tensor");
    return node_->data[static_cast<size_t>(r * dim(1) + c)];
}

const std::vector<double>& Tensor::grad() const {
    if (node_->grad.empty())
        throw ContractError("grad: not populated (did backward run?)");
    return node_->grad;
}

void Tensor::zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

namespace {
thread_local Graph* t_current_graph = nullptr;
}

Graph::Graph() : prev_(t_current_graph) { t_current_graph = this; }

Graph::~Graph() { t_current_graph = prev_; }

Graph* Graph::current() { return t_current_graph; }

void Graph::record(TapeOp op) { tape_.push_back(std::move(op)); }

std::vector<double>& Graph::scratch(const std::shared_ptr<TensorNode>& n) {
    auto& buf = scratch_[n.get()];
    if (buf.empty()) buf.assign(n->data.size(), 0.0);
    return buf;
}

std::vector<double>* Graph::find_scratch(const TensorNode* n) {
    auto it = scratch_.find(n);
    return it == scratch_.end() ? nullptr : &it->second;
}

void Graph::backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1)
        throw ContractError("backward: loss must be a defined scalar");
    if (!loss.node()->needs_grad)
        throw ContractError("backward: loss is not connected to any differentiable input");

    scratch_.clear();
    scratch_[loss.node()] = {1.0};

    for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) {
        if (!it->out->needs_grad) continue;
        if (scratch_.find(it->out.get()) == scratch_.end()) continue;  // off the loss path
        it->backward();
    }

    // single += per leaf keeps repeated backward calls exactly additive
    for (auto& [node, buf] : scratch_) {
        auto* n = const_cast<TensorNode*>(node);
        if (!n->requires_grad) continue;
        if (n->grad.empty()) n->grad.assign(n->data.size(), 0.0);
        for (size_t i = 0; i < buf.size(); ++i) n->grad[i] += buf[i];
    }
    scratch_.clear();
}

}  // namespace momq
