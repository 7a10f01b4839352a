#include "resformer/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

namespace resformer {

namespace {
thread_local bool grad_mode_enabled = true;
}

bool GradMode::enabled() { return grad_mode_enabled; }
void GradMode::set_enabled(bool on) { grad_mode_enabled = on; }

Index numel_of(const Shape& shape) {
    Index n = 1;
    for (Index d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

template <typename Scalar>
Tensor<Scalar>::Tensor(Shape shape, Scalar fill) : node_(std::make_shared<Node>()) {
    for (Index d : shape)
        if (d < 0) throw ShapeError("negative extent in shape " + shape_str(shape));
    node_->value.assign(static_cast<std::size_t>(numel_of(shape)), fill);
    node_->shape = std::move(shape);
}

template <typename Scalar>
Tensor<Scalar>::Tensor(Shape shape, std::vector<Scalar> values) : node_(std::make_shared<Node>()) {
    if (numel_of(shape) != static_cast<Index>(values.size()))
        throw ShapeError("shape " + shape_str(shape) + " holds " + std::to_string(numel_of(shape)) +
                         " values, got " + std::to_string(values.size()));
    node_->shape = std::move(shape);
    node_->value.assign(values.begin(), values.end());
}

template <typename Scalar>
Index Tensor<Scalar>::dim(int axis) const {
    const int r = rank();
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r)
        throw ShapeError("axis " + std::to_string(axis) + " out of range for rank " + std::to_string(r));
    return node_->shape[static_cast<std::size_t>(axis)];
}

template <typename Scalar>
std::span<Scalar> Tensor<Scalar>::mutable_values() {
    if (!node_->is_leaf) throw std::logic_error("mutable_values() on a non-leaf tensor");
    return node_->value;
}

template <typename Scalar>
Scalar Tensor<Scalar>::item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    return node_->value[0];
}

template <typename Scalar>
Tensor<Scalar>& Tensor<Scalar>::set_requires_grad(bool on) {
    if (!node_->is_leaf) throw std::logic_error("set_requires_grad() on a non-leaf tensor");
    node_->requires_grad = on;
    if (on)
        node_->grad.assign(node_->value.size(), Scalar(0));
    else
        node_->grad.clear();
    return *this;
}

template <typename Scalar>
void Tensor<Scalar>::zero_grad() {
    std::fill(node_->grad.begin(), node_->grad.end(), Scalar(0));
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::detach() const {
    auto node = std::make_shared<Node>();
    node->shape = node_->shape;
    node->value = node_->value;
    return Tensor(std::move(node));
}

template <typename Scalar>
void backward(const Tensor<Scalar>& loss) {
    using Node = TensorNode<Scalar>;
    if (loss.numel() != 1)
        throw ShapeError("backward() needs a scalar loss, got shape " + shape_str(loss.shape()));
    if (!loss.requires_grad()) return;

    // Iterative post-order DFS yields a topological order (parents first).
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(loss.node().get(), 0);
    visited.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* parent = node->parents[next++].get();
            if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (Node* node : order)
        if (!node->is_leaf) node->grad.assign(node->value.size(), Scalar(0));
    Node* root = loss.node().get();
    if (root->is_leaf)
        root->grad[0] += Scalar(1);
    else
        root->grad[0] = Scalar(1);

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (node->backward_fn) node->backward_fn(*node);
    }
    // Intermediate gradients are scratch space.
    for (Node* node : order)
        if (!node->is_leaf) Storage<Scalar>().swap(node->grad);
}

namespace detail {

template <typename Scalar>
bool needs_grad(std::initializer_list<const Tensor<Scalar>*> inputs) {
    if (!GradMode::enabled()) return false;
    for (const Tensor<Scalar>* t : inputs)
        if (t && t->defined() && t->requires_grad()) return true;
    return false;
}

template <typename Scalar>
Tensor<Scalar> make_result(Shape shape, Storage<Scalar> value, std::vector<Tensor<Scalar>> inputs,
                           std::function<void(TensorNode<Scalar>&)> fn) {
    auto node = std::make_shared<TensorNode<Scalar>>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    bool record = false;
    if (GradMode::enabled())
        for (const auto& in : inputs)
            if (in.defined() && in.requires_grad()) record = true;
    if (record) {
        node->requires_grad = true;
        node->is_leaf = false;
        for (auto& in : inputs)
            if (in.defined()) node->parents.push_back(in.node());
        node->backward_fn = std::move(fn);
    }
    return Tensor<Scalar>(std::move(node));
}

}  // namespace detail

#define RESFORMER_INSTANTIATE(S)                                                                   \
    template class Tensor<S>;                                                                      \
    template void backward<S>(const Tensor<S>&);                                                   \
    template bool detail::needs_grad<S>(std::initializer_list<const Tensor<S>*>);                  \
    template Tensor<S> detail::make_result<S>(Shape, Storage<S>, std::vector<Tensor<S>>,       \
                                              std::function<void(TensorNode<S>&)>);

RESFORMER_INSTANTIATE(float)
RESFORMER_INSTANTIATE(double)

}  // namespace resformer
