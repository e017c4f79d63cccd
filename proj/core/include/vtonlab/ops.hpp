#pragma once

#include "vtonlab/autograd.hpp"

// Differentiable tensor operations used by the networks. Layout conventions:
// images and latents are (N, C, H, W); token sequences are (N, L, D).
namespace vtonlab::ag {

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var silu(const Var& x);
Var reshape(const Var& x, Shape shape);

// y = x W^T + b over the last axis of x. weight is (out, in); bias optional.
Var linear(const Var& x, const Var& weight, const Var& bias = {});

// weight is (Cout, Cin, k, k); bias (Cout) optional.
Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int padding);

Var group_norm(const Var& x, const Var& gamma, const Var& beta, int groups, double eps = 1e-5);
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);

// Multi-head softmax(Q K^T / sqrt(d_head)) V. q is (N, Lq, D); k and v are
// (N, Lk, D). D must be divisible by heads.
Var attention(const Var& q, const Var& k, const Var& v, int heads);

Var to_tokens(const Var& x);                                   // (N,C,H,W) -> (N,HW,C)
Var from_tokens(const Var& x, std::int64_t h, std::int64_t w);  // (N,HW,C) -> (N,C,H,W)
Var concat1(const Var& a, const Var& b);                        // along axis 1
Var upsample_nearest2x(const Var& x);
Var add_channel_vector(const Var& x, const Var& v);  // x (N,C,H,W) + v (N,C)

// Mean of squared differences, returned as a one-element tensor.
Var mse_loss(const Var& pred, const Var& target);

}  // namespace vtonlab::ag
