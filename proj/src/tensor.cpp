#include "ptu/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace ptu {

namespace {
Precision g_precision = Precision::f64;
}

Precision precision() { return g_precision; }
void set_precision(Precision p) { g_precision = p; }

int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (const int64_t e : s) {
        if (e <= 0) throw ShapeError("non-positive extent in shape " + shape_str(s));
        n *= e;
    }
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
}

void finalize_buffer(const std::string& op, std::vector<double>& buf) {
    if (g_precision == Precision::f32) {
        for (double& v : buf) v = static_cast<double>(static_cast<float>(v));
    }
    for (size_t i = 0; i < buf.size(); ++i) {
        if (!std::isfinite(buf[i])) {
            throw ValueError("non-finite value produced by op '" + op + "' at flat index " +
                             std::to_string(i));
        }
    }
}

void TensorNode::accumulate_grad_into(TensorNode& parent, const std::vector<double>& contribution) {
    if (contribution.size() != parent.values.size())
        throw ShapeError("gradient contribution size mismatch in op '" + op + "'");
    if (parent.grad.empty()) parent.grad.assign(parent.values.size(), 0.0);
    for (size_t i = 0; i < contribution.size(); ++i) parent.grad[i] += contribution[i];
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    const int64_t n = shape_numel(shape);
    return from(std::move(shape), std::vector<double>(static_cast<size_t>(n), 0.0), requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    const int64_t n = shape_numel(shape);
    return from(std::move(shape), std::vector<double>(static_cast<size_t>(n), value),
                requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
    const int64_t n = shape_numel(shape);
    if (n != static_cast<int64_t>(values.size()))
        throw ShapeError("value count " + std::to_string(values.size()) +
                         " does not match shape " + shape_str(shape));
    finalize_buffer("leaf", values);
    auto node = std::make_shared<TensorNode>();
    node->shape = std::move(shape);
    node->values = std::move(values);
    node->requires_grad = requires_grad;
    node->needs_grad = requires_grad;
    node->op = "leaf";
    return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from({1}, {value}, requires_grad);
}

Tensor Tensor::randn(Shape shape, Rng& rng, double std, bool requires_grad) {
    const int64_t n = shape_numel(shape);
    std::vector<double> v(static_cast<size_t>(n));
    for (double& x : v) x = rng.normal(0.0, std);
    return from(std::move(shape), std::move(v), requires_grad);
}

Tensor Tensor::identity(int64_t n) {
    Tensor t = zeros({n, n});
    std::vector<double> v(static_cast<size_t>(n * n), 0.0);
    for (int64_t i = 0; i < n; ++i) v[static_cast<size_t>(i * n + i)] = 1.0;
    return from({n, n}, std::move(v));
}

const Shape& Tensor::shape() const {
    if (!node_) throw ValueError("use of undefined tensor");
    return node_->shape;
}

int64_t Tensor::numel() const { return static_cast<int64_t>(values().size()); }

int64_t Tensor::dim(size_t axis) const {
    const Shape& s = shape();
    if (axis >= s.size()) throw ShapeError("axis out of range for shape " + shape_str(s));
    return s[axis];
}

const std::vector<double>& Tensor::values() const {
    if (!node_) throw ValueError("use of undefined tensor");
    return node_->values;
}

double Tensor::scalar_value() const {
    if (numel() != 1) throw ShapeError("scalar_value on tensor of shape " + shape_str(shape()));
    return values()[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

const std::vector<double>& Tensor::grad() const {
    if (!has_grad()) throw ValueError("tensor has no gradient (backward not run or cleared)");
    return node_->grad;
}

void Tensor::clear_grad() {
    if (node_) {
        node_->grad.clear();
        node_->backward_done = false;
    }
}

void Tensor::overwrite_values(const std::vector<double>& v) {
    if (!node_) throw ValueError("use of undefined tensor");
    if (!node_->parents.empty())
        throw ValueError("tensors produced by op '" + node_->op + "' are immutable");
    if (v.size() != node_->values.size())
        throw ShapeError("overwrite_values size mismatch for shape " + shape_str(node_->shape));
    node_->values = v;
    finalize_buffer("overwrite", node_->values);
}

const std::string& Tensor::op_name() const {
    if (!node_) throw ValueError("use of undefined tensor");
    return node_->op;
}

Tensor make_op(const std::string& op, Shape shape, std::vector<double> values,
               std::vector<Tensor> parents, std::function<void(TensorNode&)> backprop) {
    const int64_t n = shape_numel(shape);
    if (n != static_cast<int64_t>(values.size()))
        throw ShapeError("op '" + op + "' produced " + std::to_string(values.size()) +
                         " values for shape " + shape_str(shape));
    finalize_buffer(op, values);
    auto node = std::make_shared<TensorNode>();
    node->shape = std::move(shape);
    node->values = std::move(values);
    node->op = op;
    bool needs = false;
    node->parents.reserve(parents.size());
    for (const Tensor& p : parents) {
        if (!p.defined()) throw ValueError("op '" + op + "' received an undefined input");
        needs = needs || p.node()->needs_grad;
        node->parents.push_back(p.node());
    }
    node->needs_grad = needs;
    if (needs) node->backprop = std::move(backprop);
    return Tensor(std::move(node));
}

void backward(const Tensor& loss) {
    if (!loss.defined()) throw ValueError("backward on undefined tensor");
    TensorNode* root = loss.node().get();
    if (loss.numel() != 1)
        throw ShapeError("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
    if (root->backward_done)
        throw ValueError("backward already called on this loss; rebuild the graph or clear grads");
    root->backward_done = true;

    // Iterative post-order DFS. Children are visited in parents order, so the
    // accumulation order (and therefore floating-point rounding) is fixed.
    std::vector<TensorNode*> order;
    std::unordered_set<TensorNode*> visited;
    std::vector<std::pair<TensorNode*, size_t>> stack;
    stack.emplace_back(root, 0);
    visited.insert(root);
    while (!stack.empty()) {
        const auto [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            stack.back().second = idx + 1;
            TensorNode* parent = node->parents[idx].get();
            if (parent->needs_grad && visited.insert(parent).second)
                stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root->grad.assign(1, 1.0);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorNode* node = *it;
        if (node->grad.empty()) continue;  // not reached by any contribution
        if (g_precision == Precision::f32)
            for (double& v : node->grad) v = static_cast<double>(static_cast<float>(v));
        for (const double v : node->grad)
            if (!std::isfinite(v))
                throw ValueError("non-finite gradient at op '" + node->op + "'");
        if (node->backprop) node->backprop(*node);
        if (!node->requires_grad) node->grad.clear();  // intermediates drop their buffers
    }
}

}  // namespace ptu
