#include "vtonlab/autograd.hpp"

#include <unordered_set>

#include "vtonlab/errors.hpp"

namespace vtonlab::ag {

namespace {
thread_local bool t_grad_enabled = true;
}

Tensor& Node::grad_buffer() {
    if (grad.shape() != value.shape()) grad = Tensor(value.shape());
    return grad;
}

void Node::accumulate_grad(const Tensor& g) {
    if (grad.shape() != value.shape()) {
        grad = g;
        return;
    }
    grad += g;
}

Var Var::constant(Tensor value) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    return Var(std::move(n));
}

Var Var::leaf(Tensor value, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    return Var(std::move(n));
}

bool grad_enabled() noexcept { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

Var make_result(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    if (!t_grad_enabled) return Var(std::move(n));
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad();
    if (!any) return Var(std::move(n));
    n->requires_grad = true;
    n->inputs.reserve(inputs.size());
    for (auto& in : inputs) n->inputs.push_back(in.node_ptr());
    n->backward = std::move(backward);
    return Var(std::move(n));
}

void backward(const Var& root) {
    if (!root.defined()) throw InvalidArgument("backward on undefined Var");
    if (root.value().numel() != 1) throw InvalidArgument("backward root must hold a single element");
    if (!root.requires_grad()) return;

    // Iterative post-order DFS for a topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(&root.node(), 0);
    visited.insert(&root.node());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            Node* child = node->inputs[next++].get();
            if (child && child->requires_grad && !visited.count(child)) {
                visited.insert(child);
                stack.emplace_back(child, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root.node().grad = Tensor(root.value().shape(), 1.0);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (!node->backward || node->grad.empty()) continue;
        node->backward(*node);
        // Interior node: its gradient and saved activations are no longer needed.
        node->backward = nullptr;
        node->grad = Tensor();
    }
}

}  // namespace vtonlab::ag
