#include "vtonlab/ops.hpp"

#include <Eigen/Core>
#include <cmath>

#include "vtonlab/errors.hpp"

namespace vtonlab::ag {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;
using StridedMap = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
using CStridedMap = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;

void check_rank(const Var& x, std::size_t r, const char* op) {
    if (x.value().rank() != r)
        throw InvalidArgument(std::string(op) + ": expected rank " + std::to_string(r) + ", got " +
                              shape_str(x.shape()));
}

bool wants(const Node& n, std::size_t i) { return n.inputs[i] && n.inputs[i]->requires_grad; }

void im2col(const double* x, std::int64_t c, std::int64_t h, std::int64_t w, int k, int stride, int pad,
            std::int64_t ho, std::int64_t wo, double* col) {
    for (std::int64_t ci = 0; ci < c; ++ci)
        for (int ki = 0; ki < k; ++ki)
            for (int kj = 0; kj < k; ++kj) {
                double* row = col + ((ci * k + ki) * k + kj) * ho * wo;
                for (std::int64_t oh = 0; oh < ho; ++oh) {
                    const std::int64_t ih = oh * stride - pad + ki;
                    for (std::int64_t ow = 0; ow < wo; ++ow) {
                        const std::int64_t iw = ow * stride - pad + kj;
                        row[oh * wo + ow] =
                            (ih >= 0 && ih < h && iw >= 0 && iw < w) ? x[(ci * h + ih) * w + iw] : 0.0;
                    }
                }
            }
}

void col2im(const double* col, std::int64_t c, std::int64_t h, std::int64_t w, int k, int stride, int pad,
            std::int64_t ho, std::int64_t wo, double* x) {
    for (std::int64_t ci = 0; ci < c; ++ci)
        for (int ki = 0; ki < k; ++ki)
            for (int kj = 0; kj < k; ++kj) {
                const double* row = col + ((ci * k + ki) * k + kj) * ho * wo;
                for (std::int64_t oh = 0; oh < ho; ++oh) {
                    const std::int64_t ih = oh * stride - pad + ki;
                    if (ih < 0 || ih >= h) continue;
                    for (std::int64_t ow = 0; ow < wo; ++ow) {
                        const std::int64_t iw = ow * stride - pad + kj;
                        if (iw >= 0 && iw < w) x[(ci * h + ih) * w + iw] += row[oh * wo + ow];
                    }
                }
            }
}

}  // namespace

Var add(const Var& a, const Var& b) {
    require_same_shape(a.value(), b.value(), "add");
    return make_result(a.value() + b.value(), {a, b}, [](Node& n) {
        if (wants(n, 0)) n.inputs[0]->accumulate_grad(n.grad);
        if (wants(n, 1)) n.inputs[1]->accumulate_grad(n.grad);
    });
}

Var sub(const Var& a, const Var& b) {
    require_same_shape(a.value(), b.value(), "sub");
    return make_result(a.value() - b.value(), {a, b}, [](Node& n) {
        if (wants(n, 0)) n.inputs[0]->accumulate_grad(n.grad);
        if (wants(n, 1)) n.inputs[1]->accumulate_grad(-1.0 * n.grad);
    });
}

Var mul(const Var& a, const Var& b) {
    require_same_shape(a.value(), b.value(), "mul");
    Tensor out = a.value();
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= b.value()[i];
    return make_result(std::move(out), {a, b}, [](Node& n) {
        const Tensor& av = n.inputs[0]->value;
        const Tensor& bv = n.inputs[1]->value;
        if (wants(n, 0)) {
            Tensor g = n.grad;
            for (std::int64_t i = 0; i < g.numel(); ++i) g[i] *= bv[i];
            n.inputs[0]->accumulate_grad(g);
        }
        if (wants(n, 1)) {
            Tensor g = n.grad;
            for (std::int64_t i = 0; i < g.numel(); ++i) g[i] *= av[i];
            n.inputs[1]->accumulate_grad(g);
        }
    });
}

Var scale(const Var& a, double s) {
    return make_result(s * a.value(), {a}, [s](Node& n) { n.inputs[0]->accumulate_grad(s * n.grad); });
}

Var silu(const Var& x) {
    Tensor out = x.value();
    for (auto& v : out.values()) v = v / (1.0 + std::exp(-v));
    return make_result(std::move(out), {x}, [](Node& n) {
        const Tensor& xv = n.inputs[0]->value;
        Tensor g = n.grad;
        for (std::int64_t i = 0; i < g.numel(); ++i) {
            const double s = 1.0 / (1.0 + std::exp(-xv[i]));
            g[i] *= s * (1.0 + xv[i] * (1.0 - s));
        }
        n.inputs[0]->accumulate_grad(g);
    });
}

Var reshape(const Var& x, Shape shape) {
    Shape original = x.shape();
    return make_result(x.value().reshaped(std::move(shape)), {x},
                       [original](Node& n) { n.inputs[0]->accumulate_grad(n.grad.reshaped(original)); });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
    check_rank(weight, 2, "linear");
    const std::int64_t dout = weight.shape()[0], din = weight.shape()[1];
    if (x.value().rank() < 1 || x.shape().back() != din)
        throw InvalidArgument("linear: input " + shape_str(x.shape()) + " incompatible with weight " +
                              shape_str(weight.shape()));
    if (bias.defined() && (bias.value().rank() != 1 || bias.shape()[0] != dout))
        throw InvalidArgument("linear: bias shape " + shape_str(bias.shape()));
    const std::int64_t rows = x.value().numel() / din;
    Shape out_shape = x.shape();
    out_shape.back() = dout;
    Tensor out(out_shape);
    MapMat y(out.data(), rows, dout);
    y.noalias() = CMapMat(x.value().data(), rows, din) * CMapMat(weight.value().data(), dout, din).transpose();
    if (bias.defined())
        y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.value().data(), dout);

    std::vector<Var> inputs{x, weight};
    if (bias.defined()) inputs.push_back(bias);
    return make_result(std::move(out), std::move(inputs), [rows, din, dout](Node& n) {
        CMapMat gy(n.grad.data(), rows, dout);
        if (wants(n, 0)) {
            Tensor& gx = n.inputs[0]->grad_buffer();
            MapMat(gx.data(), rows, din).noalias() += gy * CMapMat(n.inputs[1]->value.data(), dout, din);
        }
        if (wants(n, 1)) {
            Tensor& gw = n.inputs[1]->grad_buffer();
            MapMat(gw.data(), dout, din).noalias() += gy.transpose() * CMapMat(n.inputs[0]->value.data(), rows, din);
        }
        if (n.inputs.size() > 2 && wants(n, 2)) {
            Tensor& gb = n.inputs[2]->grad_buffer();
            Eigen::Map<Eigen::RowVectorXd>(gb.data(), dout) += gy.colwise().sum();
        }
    });
}

Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int padding) {
    check_rank(x, 4, "conv2d");
    check_rank(weight, 4, "conv2d weight");
    const std::int64_t n = x.shape()[0], cin = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
    const std::int64_t cout = weight.shape()[0];
    const int k = static_cast<int>(weight.shape()[2]);
    if (weight.shape()[1] != cin || weight.shape()[3] != k)
        throw InvalidArgument("conv2d: weight " + shape_str(weight.shape()) + " incompatible with input " +
                              shape_str(x.shape()));
    if (stride < 1 || padding < 0) throw InvalidArgument("conv2d: invalid stride/padding");
    const std::int64_t ho = (h + 2 * padding - k) / stride + 1;
    const std::int64_t wo = (w + 2 * padding - k) / stride + 1;
    if (ho <= 0 || wo <= 0) throw InvalidArgument("conv2d: input too small for kernel");
    const std::int64_t kdim = cin * k * k, hw = ho * wo;
    const bool pointwise = (k == 1 && stride == 1 && padding == 0);

    Tensor out({n, cout, ho, wo});
    auto cols = std::make_shared<TensorStorage>();
    if (!pointwise) cols->resize(static_cast<std::size_t>(n * kdim * hw));
    CMapMat wm(weight.value().data(), cout, kdim);
    for (std::int64_t b = 0; b < n; ++b) {
        const double* col;
        if (pointwise) {
            col = x.value().data() + b * cin * h * w;
        } else {
            double* c = cols->data() + b * kdim * hw;
            im2col(x.value().data() + b * cin * h * w, cin, h, w, k, stride, padding, ho, wo, c);
            col = c;
        }
        MapMat ym(out.data() + b * cout * hw, cout, hw);
        ym.noalias() = wm * CMapMat(col, kdim, hw);
        if (bias.defined()) ym.colwise() += Eigen::Map<const Eigen::VectorXd>(bias.value().data(), cout);
    }

    std::vector<Var> inputs{x, weight};
    if (bias.defined()) inputs.push_back(bias);
    return make_result(std::move(out), std::move(inputs),
                       [=](Node& node) {
                           const Tensor& wv = node.inputs[1]->value;
                           CMapMat wmat(wv.data(), cout, kdim);
                           TensorStorage dcol(pointwise ? 0 : static_cast<std::size_t>(kdim * hw));
                           for (std::int64_t b = 0; b < n; ++b) {
                               CMapMat gy(node.grad.data() + b * cout * hw, cout, hw);
                               const double* col = pointwise ? node.inputs[0]->value.data() + b * cin * h * w
                                                             : cols->data() + b * kdim * hw;
                               if (wants(node, 1)) {
                                   Tensor& gw = node.inputs[1]->grad_buffer();
                                   MapMat(gw.data(), cout, kdim).noalias() += gy * CMapMat(col, kdim, hw).transpose();
                               }
                               if (node.inputs.size() > 2 && wants(node, 2)) {
                                   Tensor& gb = node.inputs[2]->grad_buffer();
                                   Eigen::Map<Eigen::VectorXd>(gb.data(), cout) += gy.rowwise().sum();
                               }
                               if (wants(node, 0)) {
                                   Tensor& gx = node.inputs[0]->grad_buffer();
                                   double* gxb = gx.data() + b * cin * h * w;
                                   if (pointwise) {
                                       MapMat(gxb, cin, hw).noalias() += wmat.transpose() * gy;
                                   } else {
                                       MapMat(dcol.data(), kdim, hw).noalias() = wmat.transpose() * gy;
                                       col2im(dcol.data(), cin, h, w, k, stride, padding, ho, wo, gxb);
                                   }
                               }
                           }
                       });
}

Var group_norm(const Var& x, const Var& gamma, const Var& beta, int groups, double eps) {
    check_rank(x, 4, "group_norm");
    const std::int64_t n = x.shape()[0], c = x.shape()[1], hw = x.shape()[2] * x.shape()[3];
    if (groups < 1 || c % groups != 0)
        throw InvalidArgument("group_norm: " + std::to_string(groups) + " groups do not divide " + std::to_string(c));
    if (gamma.value().numel() != c || beta.value().numel() != c)
        throw InvalidArgument("group_norm: affine parameters must have C elements");
    const std::int64_t cpg = c / groups, gsize = cpg * hw;

    Tensor out(x.shape());
    auto xhat = std::make_shared<Tensor>(x.shape());
    auto rstd = std::make_shared<TensorStorage>(static_cast<std::size_t>(n * groups));
    const double* xv = x.value().data();
    for (std::int64_t b = 0; b < n; ++b)
        for (std::int64_t g = 0; g < groups; ++g) {
            const std::int64_t off = (b * c + g * cpg) * hw;
            double mean = 0.0;
            for (std::int64_t i = 0; i < gsize; ++i) mean += xv[off + i];
            mean /= static_cast<double>(gsize);
            double var = 0.0;
            for (std::int64_t i = 0; i < gsize; ++i) var += (xv[off + i] - mean) * (xv[off + i] - mean);
            var /= static_cast<double>(gsize);
            const double r = 1.0 / std::sqrt(var + eps);
            (*rstd)[static_cast<std::size_t>(b * groups + g)] = r;
            for (std::int64_t i = 0; i < gsize; ++i) {
                const std::int64_t ch = g * cpg + i / hw;
                const double xh = (xv[off + i] - mean) * r;
                (*xhat)[off + i] = xh;
                out[off + i] = xh * gamma.value()[ch] + beta.value()[ch];
            }
        }

    return make_result(std::move(out), {x, gamma, beta}, [=](Node& node) {
        const Tensor& gy = node.grad;
        const Tensor& gam = node.inputs[1]->value;
        if (wants(node, 1) || wants(node, 2)) {
            Tensor dg(Shape{c}), db(Shape{c});
            for (std::int64_t b = 0; b < n; ++b)
                for (std::int64_t ch = 0; ch < c; ++ch) {
                    const std::int64_t off = (b * c + ch) * hw;
                    for (std::int64_t i = 0; i < hw; ++i) {
                        dg[ch] += gy[off + i] * (*xhat)[off + i];
                        db[ch] += gy[off + i];
                    }
                }
            if (wants(node, 1)) node.inputs[1]->accumulate_grad(dg);
            if (wants(node, 2)) node.inputs[2]->accumulate_grad(db);
        }
        if (wants(node, 0)) {
            Tensor& gx = node.inputs[0]->grad_buffer();
            TensorStorage dxh(static_cast<std::size_t>(gsize));
            for (std::int64_t b = 0; b < n; ++b)
                for (std::int64_t g = 0; g < groups; ++g) {
                    const std::int64_t off = (b * c + g * cpg) * hw;
                    double m1 = 0.0, m2 = 0.0;
                    for (std::int64_t i = 0; i < gsize; ++i) {
                        const std::int64_t ch = g * cpg + i / hw;
                        dxh[static_cast<std::size_t>(i)] = gy[off + i] * gam[ch];
                        m1 += dxh[static_cast<std::size_t>(i)];
                        m2 += dxh[static_cast<std::size_t>(i)] * (*xhat)[off + i];
                    }
                    m1 /= static_cast<double>(gsize);
                    m2 /= static_cast<double>(gsize);
                    const double r = (*rstd)[static_cast<std::size_t>(b * groups + g)];
                    for (std::int64_t i = 0; i < gsize; ++i)
                        gx[off + i] += r * (dxh[static_cast<std::size_t>(i)] - m1 - (*xhat)[off + i] * m2);
                }
        }
    });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
    if (x.value().rank() < 1) throw InvalidArgument("layer_norm: rank-0 input");
    const std::int64_t d = x.shape().back(), rows = x.value().numel() / d;
    if (gamma.value().numel() != d || beta.value().numel() != d)
        throw InvalidArgument("layer_norm: affine parameters must match the last axis");
    Tensor out(x.shape());
    auto xhat = std::make_shared<Tensor>(x.shape());
    auto rstd = std::make_shared<TensorStorage>(static_cast<std::size_t>(rows));
    const double* xv = x.value().data();
    for (std::int64_t r = 0; r < rows; ++r) {
        const double* row = xv + r * d;
        double mean = 0.0;
        for (std::int64_t i = 0; i < d; ++i) mean += row[i];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::int64_t i = 0; i < d; ++i) var += (row[i] - mean) * (row[i] - mean);
        var /= static_cast<double>(d);
        const double s = 1.0 / std::sqrt(var + eps);
        (*rstd)[static_cast<std::size_t>(r)] = s;
        for (std::int64_t i = 0; i < d; ++i) {
            const double xh = (row[i] - mean) * s;
            (*xhat)[r * d + i] = xh;
            out[r * d + i] = xh * gamma.value()[i] + beta.value()[i];
        }
    }
    return make_result(std::move(out), {x, gamma, beta}, [=](Node& node) {
        const Tensor& gy = node.grad;
        const Tensor& gam = node.inputs[1]->value;
        if (wants(node, 1) || wants(node, 2)) {
            Tensor dg(Shape{d}), db(Shape{d});
            for (std::int64_t r = 0; r < rows; ++r)
                for (std::int64_t i = 0; i < d; ++i) {
                    dg[i] += gy[r * d + i] * (*xhat)[r * d + i];
                    db[i] += gy[r * d + i];
                }
            if (wants(node, 1)) node.inputs[1]->accumulate_grad(dg);
            if (wants(node, 2)) node.inputs[2]->accumulate_grad(db);
        }
        if (wants(node, 0)) {
            Tensor& gx = node.inputs[0]->grad_buffer();
            for (std::int64_t r = 0; r < rows; ++r) {
                double m1 = 0.0, m2 = 0.0;
                for (std::int64_t i = 0; i < d; ++i) {
                    const double dxh = gy[r * d + i] * gam[i];
                    m1 += dxh;
                    m2 += dxh * (*xhat)[r * d + i];
                }
                m1 /= static_cast<double>(d);
                m2 /= static_cast<double>(d);
                const double s = (*rstd)[static_cast<std::size_t>(r)];
                for (std::int64_t i = 0; i < d; ++i)
                    gx[r * d + i] += s * (gy[r * d + i] * gam[i] - m1 - (*xhat)[r * d + i] * m2);
            }
        }
    });
}

Var attention(const Var& q, const Var& k, const Var& v, int heads) {
    check_rank(q, 3, "attention q");
    check_rank(k, 3, "attention k");
    check_rank(v, 3, "attention v");
    const std::int64_t n = q.shape()[0], lq = q.shape()[1], d = q.shape()[2];
    const std::int64_t lk = k.shape()[1];
    if (k.shape()[0] != n || v.shape()[0] != n) throw InvalidArgument("attention: batch mismatch");
    if (k.shape()[2] != d) throw InvalidArgument("attention: query/key width mismatch");
    if (v.shape()[1] != lk) throw InvalidArgument("attention: key/value token count mismatch");
    if (v.shape()[2] != d) throw InvalidArgument("attention: value width must equal query width");
    if (lk == 0) throw InvalidArgument("attention: empty key sequence");
    if (heads < 1 || d % heads != 0) throw InvalidArgument("attention: heads must divide model width");
    const std::int64_t dh = d / heads;
    const double sc = 1.0 / std::sqrt(static_cast<double>(dh));

    Tensor out({n, lq, d});
    auto probs = std::make_shared<TensorStorage>(static_cast<std::size_t>(n * heads * lq * lk));
    for (std::int64_t b = 0; b < n; ++b)
        for (int hd = 0; hd < heads; ++hd) {
            CStridedMap qh(q.value().data() + b * lq * d + hd * dh, lq, dh, Eigen::OuterStride<>(d));
            CStridedMap kh(k.value().data() + b * lk * d + hd * dh, lk, dh, Eigen::OuterStride<>(d));
            CStridedMap vh(v.value().data() + b * lk * d + hd * dh, lk, dh, Eigen::OuterStride<>(d));
            MapMat p(probs->data() + (b * heads + hd) * lq * lk, lq, lk);
            p.noalias() = (qh * kh.transpose()) * sc;
            for (std::int64_t i = 0; i < lq; ++i) {
                const double mx = p.row(i).maxCoeff();
                p.row(i) = (p.row(i).array() - mx).exp();
                p.row(i) /= p.row(i).sum();
            }
            StridedMap oh(out.data() + b * lq * d + hd * dh, lq, dh, Eigen::OuterStride<>(d));
            oh.noalias() = p * vh;
        }

    return make_result(std::move(out), {q, k, v}, [=](Node& node) {
        const bool gq = wants(node, 0), gk = wants(node, 1), gv = wants(node, 2);
        RowMat dp, ds;
        for (std::int64_t b = 0; b < n; ++b)
            for (int hd = 0; hd < heads; ++hd) {
                CStridedMap go(node.grad.data() + b * lq * d + hd * dh, lq, dh, Eigen::OuterStride<>(d));
                CStridedMap qh(node.inputs[0]->value.data() + b * lq * d + hd * dh, lq, dh, Eigen::OuterStride<>(d));
                CStridedMap kh(node.inputs[1]->value.data() + b * lk * d + hd * dh, lk, dh, Eigen::OuterStride<>(d));
                CStridedMap vh(node.inputs[2]->value.data() + b * lk * d + hd * dh, lk, dh, Eigen::OuterStride<>(d));
                CMapMat p(probs->data() + (b * heads + hd) * lq * lk, lq, lk);
                if (gv) {
                    Tensor& g = node.inputs[2]->grad_buffer();
                    StridedMap(g.data() + b * lk * d + hd * dh, lk, dh, Eigen::OuterStride<>(d)).noalias() +=
                        p.transpose() * go;
                }
                if (!gq && !gk) continue;
                dp.noalias() = go * vh.transpose();
                ds = p.array() * (dp.array().colwise() - (dp.array() * p.array()).rowwise().sum());
                if (gq) {
                    Tensor& g = node.inputs[0]->grad_buffer();
                    StridedMap(g.data() + b * lq * d + hd * dh, lq, dh, Eigen::OuterStride<>(d)).noalias() +=
                        (ds * kh) * sc;
                }
                if (gk) {
                    Tensor& g = node.inputs[1]->grad_buffer();
                    StridedMap(g.data() + b * lk * d + hd * dh, lk, dh, Eigen::OuterStride<>(d)).noalias() +=
                        (ds.transpose() * qh) * sc;
                }
            }
    });
}

Var to_tokens(const Var& x) {
    check_rank(x, 4, "to_tokens");
    const std::int64_t n = x.shape()[0], c = x.shape()[1], hw = x.shape()[2] * x.shape()[3];
    Tensor out({n, hw, c});
    for (std::int64_t b = 0; b < n; ++b)
        MapMat(out.data() + b * hw * c, hw, c) = CMapMat(x.value().data() + b * c * hw, c, hw).transpose();
    return make_result(std::move(out), {x}, [n, c, hw](Node& node) {
        Tensor& g = node.inputs[0]->grad_buffer();
        for (std::int64_t b = 0; b < n; ++b)
            MapMat(g.data() + b * c * hw, c, hw) += CMapMat(node.grad.data() + b * hw * c, hw, c).transpose();
    });
}

Var from_tokens(const Var& x, std::int64_t h, std::int64_t w) {
    check_rank(x, 3, "from_tokens");
    const std::int64_t n = x.shape()[0], hw = x.shape()[1], c = x.shape()[2];
    if (hw != h * w) throw InvalidArgument("from_tokens: token count does not match spatial size");
    Tensor out({n, c, h, w});
    for (std::int64_t b = 0; b < n; ++b)
        MapMat(out.data() + b * c * hw, c, hw) = CMapMat(x.value().data() + b * hw * c, hw, c).transpose();
    return make_result(std::move(out), {x}, [n, c, hw](Node& node) {
        Tensor& g = node.inputs[0]->grad_buffer();
        for (std::int64_t b = 0; b < n; ++b)
            MapMat(g.data() + b * hw * c, hw, c) += CMapMat(node.grad.data() + b * c * hw, c, hw).transpose();
    });
}

Var concat1(const Var& a, const Var& b) {
    const Tensor parts[] = {a.value(), b.value()};
    Tensor out = concat(parts, 1);
    const std::int64_t n = a.shape()[0];
    const std::int64_t ca = a.value().numel() / std::max<std::int64_t>(n, 1);
    const std::int64_t cb = b.value().numel() / std::max<std::int64_t>(n, 1);
    return make_result(std::move(out), {a, b}, [n, ca, cb](Node& node) {
        for (int side = 0; side < 2; ++side) {
            if (!wants(node, static_cast<std::size_t>(side))) continue;
            Tensor& g = node.inputs[static_cast<std::size_t>(side)]->grad_buffer();
            const std::int64_t len = side == 0 ? ca : cb, off = side == 0 ? 0 : ca;
            for (std::int64_t i = 0; i < n; ++i)
                for (std::int64_t j = 0; j < len; ++j) g[i * len + j] += node.grad[i * (ca + cb) + off + j];
        }
    });
}

Var upsample_nearest2x(const Var& x) {
    check_rank(x, 4, "upsample_nearest2x");
    const std::int64_t n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
    Tensor out({n, c, 2 * h, 2 * w});
    for (std::int64_t p = 0; p < n * c; ++p)
        for (std::int64_t i = 0; i < 2 * h; ++i)
            for (std::int64_t j = 0; j < 2 * w; ++j)
                out[(p * 2 * h + i) * 2 * w + j] = x.value()[(p * h + i / 2) * w + j / 2];
    return make_result(std::move(out), {x}, [n, c, h, w](Node& node) {
        Tensor& g = node.inputs[0]->grad_buffer();
        for (std::int64_t p = 0; p < n * c; ++p)
            for (std::int64_t i = 0; i < 2 * h; ++i)
                for (std::int64_t j = 0; j < 2 * w; ++j)
                    g[(p * h + i / 2) * w + j / 2] += node.grad[(p * 2 * h + i) * 2 * w + j];
    });
}

Var add_channel_vector(const Var& x, const Var& v) {
    check_rank(x, 4, "add_channel_vector");
    const std::int64_t n = x.shape()[0], c = x.shape()[1], hw = x.shape()[2] * x.shape()[3];
    if (v.shape() != Shape{n, c}) throw InvalidArgument("add_channel_vector: vector must be (N, C)");
    Tensor out = x.value();
    for (std::int64_t p = 0; p < n * c; ++p)
        for (std::int64_t i = 0; i < hw; ++i) out[p * hw + i] += v.value()[p];
    return make_result(std::move(out), {x, v}, [n, c, hw](Node& node) {
        if (wants(node, 0)) node.inputs[0]->accumulate_grad(node.grad);
        if (wants(node, 1)) {
            Tensor& g = node.inputs[1]->grad_buffer();
            for (std::int64_t p = 0; p < n * c; ++p) {
                double s = 0.0;
                for (std::int64_t i = 0; i < hw; ++i) s += node.grad[p * hw + i];
                g[p] += s;
            }
        }
    });
}

Var mse_loss(const Var& pred, const Var& target) {
    require_same_shape(pred.value(), target.value(), "mse_loss");
    const std::int64_t count = pred.value().numel();
    if (count == 0) throw InvalidArgument("mse_loss: empty input");
    double s = 0.0;
    for (std::int64_t i = 0; i < count; ++i) {
        const double e = pred.value()[i] - target.value()[i];
        s += e * e;
    }
    Tensor out(Shape{1}, s / static_cast<double>(count));
    return make_result(std::move(out), {pred, target}, [count](Node& node) {
        const double g = node.grad[0] * 2.0 / static_cast<double>(count);
        const Tensor& p = node.inputs[0]->value;
        const Tensor& t = node.inputs[1]->value;
        if (wants(node, 0)) {
            Tensor& gp = node.inputs[0]->grad_buffer();
            for (std::int64_t i = 0; i < count; ++i) gp[i] += g * (p[i] - t[i]);
        }
        if (wants(node, 1)) {
            Tensor& gt = node.inputs[1]->grad_buffer();
            for (std::int64_t i = 0; i < count; ++i) gt[i] -= g * (p[i] - t[i]);
        }
    });
}

}  // namespace vtonlab::ag
