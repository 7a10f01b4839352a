#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace resformer {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

/// Thrown when operand shapes are incompatible. The message names the axis.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

Index numel_of(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Enables or disables graph recording for the current thread.
class GradMode {
public:
    static bool enabled();
    static void set_enabled(bool on);
};

/// RAII scope in which no autodiff graph is recorded.
class NoGradGuard {
public:
    NoGradGuard() : previous_(GradMode::enabled()) { GradMode::set_enabled(false); }
    ~NoGradGuard() { GradMode::set_enabled(previous_); }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

/// Tensor storage, aligned to the SIMD width. Eigen picks its peeling and
/// packet paths from the buffer address, so with plain malloc alignment the
/// float rounding of a product could depend on allocation history.
template <typename Scalar>
using Storage = std::vector<Scalar, Eigen::aligned_allocator<Scalar>>;

template <typename Scalar>
struct TensorNode {
    Shape shape;
    Storage<Scalar> value;
    // Sized like value for every node that requires grad during backward().
    Storage<Scalar> grad;
    bool requires_grad = false;
    bool is_leaf = true;
    std::vector<std::shared_ptr<TensorNode>> parents;
    // Reads self.grad and accumulates into the parents' grad.
    std::function<void(TensorNode& self)> backward_fn;
};

/// Dense row-major tensor handle with reverse-mode autodiff.
///
/// Copies share storage. Values produced by operations are treated as
/// immutable; only leaf tensors (parameters, inputs) are written in place.
template <typename Scalar>
class Tensor {
public:
    using Node = TensorNode<Scalar>;
    using VectorMap = Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>;
    using ConstVectorMap = Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>;

    Tensor() = default;
    explicit Tensor(Shape shape, Scalar fill = Scalar(0));
    Tensor(Shape shape, std::vector<Scalar> values);

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape), Scalar(0)); }
    static Tensor ones(Shape shape) { return Tensor(std::move(shape), Scalar(1)); }
    static Tensor full(Shape shape, Scalar v) { return Tensor(std::move(shape), v); }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    Index dim(int axis) const;
    int rank() const { return static_cast<int>(node_->shape.size()); }
    Index numel() const { return static_cast<Index>(node_->value.size()); }

    std::span<const Scalar> values() const { return node_->value; }
    /// Only valid on leaves: graph nodes must not be mutated after creation.
    std::span<Scalar> mutable_values();
    ConstVectorMap vec() const { return ConstVectorMap(node_->value.data(), numel()); }
    Scalar item() const;
    Scalar operator[](Index i) const { return node_->value[static_cast<std::size_t>(i)]; }

    bool requires_grad() const { return node_->requires_grad; }
    /// Marks a leaf as trainable; allocates a zeroed gradient of identical shape.
    Tensor& set_requires_grad(bool on);
    std::span<const Scalar> grad() const { return node_->grad; }
    std::span<Scalar> mutable_grad() { return node_->grad; }
    void zero_grad();

    bool is_leaf() const { return node_->is_leaf; }
    /// Leaf copy of the values, disconnected from any graph.
    Tensor detach() const;

    const std::shared_ptr<Node>& node() const { return node_; }
    explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

private:
    std::shared_ptr<Node> node_;
};

/// A trainable leaf tensor; its gradient always matches its shape.
template <typename Scalar>
using Parameter = Tensor<Scalar>;

/// Accumulates d(loss)/d(leaf) into every reachable leaf that requires grad.
/// Repeated calls accumulate; clear with Tensor::zero_grad().
template <typename Scalar>
void backward(const Tensor<Scalar>& loss);

namespace detail {

/// True when the result of an op over `inputs` must record a graph node.
template <typename Scalar>
bool needs_grad(std::initializer_list<const Tensor<Scalar>*> inputs);

/// Builds an op result. `fn` is attached only when a graph is recorded.
template <typename Scalar>
Tensor<Scalar> make_result(Shape shape, Storage<Scalar> value,
                           std::vector<Tensor<Scalar>> inputs,
                           std::function<void(TensorNode<Scalar>&)> fn);

}  // namespace detail

}  // namespace resformer
