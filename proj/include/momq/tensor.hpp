#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace momq {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ContractError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class Precision { f64, f32 };

// Compute precision for newly produced tensors. In f32 mode every op output
// (and every optimizer write) is rounded to float32; accumulation still runs
// in double. Installed per-scope, defaults to f64.
Precision current_precision();
class PrecisionScope {
public:
    explicit PrecisionScope(Precision p);
    ~PrecisionScope();
    PrecisionScope(const PrecisionScope&) = delete;
    PrecisionScope& operator=(const PrecisionScope&) = delete;

private:
    Precision prev_;
};
double quantize_value(double v, Precision p);
void quantize_buffer(std::vector<double>& buf, Precision p);

struct TensorNode {
    Shape shape;
    std::vector<double> data;   // row-major
    std::vector<double> grad;   // persistent; empty until backward touches it
    bool requires_grad = false; // leaf parameter flag
    bool needs_grad = false;    // requires_grad, or produced from such under a graph
    uint64_t id = 0;
};

// Value handle on a graph node. Copies share the node.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
    static Tensor scalar(double value);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int64_t ndim() const { return static_cast<int64_t>(node_->shape.size()); }
    int64_t dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
    int64_t numel() const { return static_cast<int64_t>(node_->data.size()); }

    std::vector<double>& data() { return node_->data; }
    const std::vector<double>& data() const { return node_->data; }
    double item() const;
    double at(int64_t r, int64_t c) const;

    bool requires_grad() const { return node_->requires_grad; }
    bool needs_grad() const { return node_->needs_grad; }
    bool has_grad() const { return !node_->grad.empty(); }
    const std::vector<double>& grad() const;
    void zero_grad();

    TensorNode* node() const { return node_.get(); }
    const std::shared_ptr<TensorNode>& node_ptr() const { return node_; }

    explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}

private:
    std::shared_ptr<TensorNode> node_;
};

// One recorded operation: inputs, output, and the rule that maps the output's
// gradient onto the inputs' gradients.
struct TapeOp {
    const char* name;
    std::vector<std::shared_ptr<TensorNode>> inputs;
    std::shared_ptr<TensorNode> out;
    std::function<void()> backward;
};

// Define-by-run tape. Constructing a Graph makes it the current recording
// target for this thread; destruction restores the previous one. Recording
// order is topological by construction and backward walks it in reverse,
// visiting each op once.
//
// During backward, per-node gradients accumulate in scratch buffers; at the
// end each requires_grad leaf receives a single += of its scratch total, so
// running backward twice without zeroing doubles every gradient exactly.
class Graph {
public:
    Graph();
    ~Graph();
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    void backward(const Tensor& loss);
    size_t size() const { return tape_.size(); }

    static Graph* current();

    void record(TapeOp op);
    std::vector<double>& scratch(const std::shared_ptr<TensorNode>& n);
    std::vector<double>* find_scratch(const TensorNode* n);

private:
    std::vector<TapeOp> tape_;
    std::unordered_map<const TensorNode*, std::vector<double>> scratch_;
    Graph* prev_ = nullptr;
};

}  // namespace momq
