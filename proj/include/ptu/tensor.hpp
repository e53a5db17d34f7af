#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "ptu/error.hpp"
#include "ptu/rng.hpp"

namespace ptu {

// Global arithmetic mode. f64 is used by the verification suites (finite
// differences need the headroom); f32 is the training mode, where every op
// result is representable as a 32-bit float.
enum class Precision { f32, f64 };

Precision precision();
void set_precision(Precision p);

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

class TensorNode;
using NodePtr = std::shared_ptr<TensorNode>;

// Reverse-mode graph node. Values are written exactly once, when the owning
// op finishes; grad is populated by backward(). Storage is double in both
// precision modes; in f32 mode every stored value is exactly a float.
class TensorNode {
public:
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;  // empty until backward reaches this node
    bool requires_grad = false;  // leaf flag: grads are kept here after backward
    bool needs_grad = false;     // this node or an ancestor requires grad
    bool backward_done = false;  // set on the node backward() was called on
    std::string op;
    std::vector<NodePtr> parents;
    // Accumulates into parents' grads using this node's grad.
    std::function<void(TensorNode&)> backprop;

    void accumulate_grad_into(TensorNode& parent, const std::vector<double>& contribution);
};

// Value-semantics handle to a graph node. Copies share the node.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
    // Zero-mean normal init with the given std.
    static Tensor randn(Shape shape, Rng& rng, double std, bool requires_grad = false);
    static Tensor identity(int64_t n);

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const;
    int64_t numel() const;
    int64_t dim(size_t axis) const;
    int64_t rank() const { return static_cast<int64_t>(shape().size()); }

    const std::vector<double>& values() const;
    double value_at(int64_t flat) const { return values()[static_cast<size_t>(flat)]; }
    double scalar_value() const;

    bool requires_grad() const;
    bool has_grad() const;
    const std::vector<double>& grad() const;
    void clear_grad();

    // Leaf-only in-place overwrite (optimizer steps, checkpoint restore).
    // Tensors produced by ops are immutable; calling this on one throws.
    void overwrite_values(const std::vector<double>& v);

    const std::string& op_name() const;
    NodePtr node() const { return node_; }

    explicit Tensor(NodePtr n) : node_(std::move(n)) {}

private:
    NodePtr node_;
};

// Builds an op result node: checks finiteness, applies the f32 quantization
// in f32 mode, and wires parents + backprop. Modules outside numerics use
// this to add fused primitives (each of which must pass grad_check).
Tensor make_op(const std::string& op, Shape shape, std::vector<double> values,
               std::vector<Tensor> parents, std::function<void(TensorNode&)> backprop);

// Applies precision quantization and fail-fast NaN/Inf checking to a raw
// buffer about to become a node's values or grad contribution.
void finalize_buffer(const std::string& op, std::vector<double>& buf);

// Reverse-mode accumulation from a scalar loss. Populates grad on every
// reachable requires_grad tensor. Calling it twice on the same loss without
// rebuilding the graph throws.
void backward(const Tensor& loss);

}  // namespace ptu
