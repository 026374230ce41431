#pragma once

// Minimal reverse-mode automatic differentiation over Tensor values.
//
// A Var is a shared handle to a graph node. Nodes created from inputs that do
// not require gradients carry no backward closure, so inference builds no
// graph. Gradients accumulate into `grad` until explicitly cleared.

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "invgan/tensor.hpp"

namespace invgan::ag {

template <class T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward;

    /// Gradient buffer, zero-allocated on first use.
    T* grad_ptr()
    {
        if (grad.data.size() != value.data.size())
            grad = Tensor<T>(value.shape, T(0));
        return grad.ptr();
    }
    const std::vector<int>& shape() const noexcept { return value.shape; }
    std::size_t size() const noexcept { return value.size(); }
};

template <class T>
using Var = std::shared_ptr<Node<T>>;

template <class T>
Var<T> constant(Tensor<T> value)
{
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    return n;
}

template <class T>
Var<T> leaf(Tensor<T> value)
{
    auto n = constant(std::move(value));
    n->requires_grad = true;
    return n;
}

/// Node for an op result. The closure is kept only when some input needs a
/// gradient.
template <class T>
Var<T> make_node(Tensor<T> value, std::vector<Var<T>> inputs, std::function<void(Node<T>&)> backward)
{
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    for (const auto& in : inputs)
        n->requires_grad = n->requires_grad || in->requires_grad;
    if (n->requires_grad) {
        n->inputs = std::move(inputs);
        n->backward = std::move(backward);
    }
    return n;
}

/// Copy of the value with no history.
template <class T>
Var<T> detach(const Var<T>& v)
{
    return constant(v->value);
}

/// Seeds d(root)/d(root) = 1 (root must be a scalar) and propagates through
/// the graph in reverse topological order.
template <class T>
void backward(const Var<T>& root)
{
    if (root->size() != 1)
        throw ShapeError("backward: root must be a scalar, got " + root->value.shape_str());
    if (!root->requires_grad)
        return;

    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<Node<T>*, std::size_t>> stack{{root.get(), 0}};
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            Node<T>* child = node->inputs[next++].get();
            if (child->requires_grad && seen.insert(child).second)
                stack.emplace_back(child, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root->grad_ptr()[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* node = *it;
        if (node->backward && node->grad.size() == node->size())
            node->backward(*node);
    }
}

} // namespace invgan::ag
