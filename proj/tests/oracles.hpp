#pragma once

#include <cmath>
#include <vector>

#include "vtonlab/tensor.hpp"

// Plain-loop reference implementations, independent of the library kernels.
namespace vtonlab::oracle {

// x (N, L, Din) times W^T with W (Dout, Din).
inline Tensor project(const Tensor& x, const Tensor& w) {
    const auto n = x.dim(0), l = x.dim(1), din = x.dim(2), dout = w.dim(0);
    Tensor y({n, l, dout});
    for (std::int64_t b = 0; b < n; ++b)
        for (std::int64_t i = 0; i < l; ++i)
            for (std::int64_t o = 0; o < dout; ++o) {
                double s = 0.0;
                for (std::int64_t k = 0; k < din; ++k) s += x[(b * l + i) * din + k] * w[o * din + k];
                y[(b * l + i) * dout + o] = s;
            }
    return y;
}

// Multi-head softmax(Q K^T / sqrt(d_head)) V.
inline Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads) {
    const auto n = q.dim(0), lq = q.dim(1), lk = k.dim(1), d = q.dim(2), dv = v.dim(2);
    const auto dh = d / heads, dvh = dv / heads;
    Tensor out({n, lq, dv});
    std::vector<double> w(static_cast<std::size_t>(lk));
    for (std::int64_t b = 0; b < n; ++b)
        for (int h = 0; h < heads; ++h)
            for (std::int64_t i = 0; i < lq; ++i) {
                double mx = -1e300;
                for (std::int64_t j = 0; j < lk; ++j) {
                    double s = 0.0;
                    for (std::int64_t c = 0; c < dh; ++c)
                        s += q[(b * lq + i) * d + h * dh + c] * k[(b * lk + j) * d + h * dh + c];
                    w[j] = s / std::sqrt(static_cast<double>(dh));
                    mx = std::max(mx, w[j]);
                }
                double z = 0.0;
                for (std::int64_t j = 0; j < lk; ++j) z += (w[j] = std::exp(w[j] - mx));
                for (std::int64_t c = 0; c < dvh; ++c) {
                    double s = 0.0;
                    for (std::int64_t j = 0; j < lk; ++j) s += w[j] / z * v[(b * lk + j) * dv + h * dvh + c];
                    out[(b * lq + i) * dv + h * dvh + c] = s;
                }
            }
    return out;
}

// Concatenate two (N, L, D) sequences along the token axis.
inline Tensor concat_tokens(const Tensor& a, const Tensor& b) {
    const auto n = a.dim(0), la = a.dim(1), lb = b.dim(1), d = a.dim(2);
    Tensor out({n, la + lb, d});
    for (std::int64_t s = 0; s < n; ++s) {
        for (std::int64_t i = 0; i < la * d; ++i) out[s * (la + lb) * d + i] = a[s * la * d + i];
        for (std::int64_t i = 0; i < lb * d; ++i) out[s * (la + lb) * d + la * d + i] = b[s * lb * d + i];
    }
    return out;
}

// First `count` tokens of an (N, L, D) sequence.
inline Tensor first_tokens(const Tensor& x, std::int64_t count) {
    const auto n = x.dim(0), l = x.dim(1), d = x.dim(2);
    Tensor out({n, count, d});
    for (std::int64_t s = 0; s < n; ++s)
        for (std::int64_t i = 0; i < count * d; ++i) out[s * count * d + i] = x[s * l * d + i];
    return out;
}

// Self-attention over the 2N-token sequence [tryon; garment], all 2N outputs.
inline Tensor full_self_attention(const Tensor& seq, const Tensor& wq, const Tensor& wk, const Tensor& wv,
                                  const Tensor& wo, int heads) {
    return project(attention(project(seq, wq), project(seq, wk), project(seq, wv), heads), wo);
}

}  // namespace vtonlab::oracle
