#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "vtonlab/tensor.hpp"

// Minimal reverse-mode automatic differentiation over Tensor values.
//
// A Var is a handle to a graph node. Leaves either require gradients
// (trainable parameters) or are constants. Operations record a backward
// closure only when grad mode is on and at least one input requires grad,
// so frozen sub-networks never receive (or cost) a gradient.
namespace vtonlab::ag {

struct Node {
    Tensor value;
    Tensor grad;  // empty until something flows into it
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward;

    Tensor& grad_buffer();
    void accumulate_grad(const Tensor& g);
};

class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    static Var constant(Tensor value);
    static Var leaf(Tensor value, bool requires_grad);

    bool defined() const noexcept { return static_cast<bool>(node_); }
    const Tensor& value() const { return node_->value; }
    const Shape& shape() const { return node_->value.shape(); }
    bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
    const Tensor& grad() const { return node_->grad; }

    Node& node() const { return *node_; }
    const std::shared_ptr<Node>& node_ptr() const noexcept { return node_; }

private:
    std::shared_ptr<Node> node_;
};

// Backpropagate from a single-element root. Gradients accumulate into every
// reachable node that requires grad; interior buffers are released as soon as
// they have been consumed.
void backward(const Var& root);

bool grad_enabled() noexcept;

// Disables graph recording on the current thread for the guard's lifetime.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

// Builds an op result. `backward` is dropped when no input requires grad.
Var make_result(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward);

}  // namespace vtonlab::ag
