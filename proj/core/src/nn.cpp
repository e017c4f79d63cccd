#include "vtonlab/nn.hpp"

#include <cmath>

#include "vtonlab/errors.hpp"
#include "vtonlab/hash.hpp"
#include "vtonlab/ops.hpp"
#include "vtonlab/rng.hpp"

namespace vtonlab::nn {

Param::Param(Tensor init, bool trainable) : var_(ag::Var::leaf(std::move(init), trainable)) {}

Param::Param(const Param& other) {
    if (other.var_.defined()) var_ = ag::Var::leaf(other.value(), other.trainable());
}

Param& Param::operator=(const Param& other) {
    if (this != &other) {
        if (other.var_.defined())
            var_ = ag::Var::leaf(other.value(), other.trainable());
        else
            var_ = ag::Var();
    }
    return *this;
}

void Param::zero_grad() {
    if (var_.defined()) var_.node().grad = Tensor();
}

Tensor Init::normal(Shape shape, double stddev) const {
    Rng rng(derive_seed(seed_, fnv1a64(path_)));
    return Tensor::randn(std::move(shape), rng, stddev);
}

Linear::Linear(std::int64_t in, std::int64_t out, bool with_bias, const Init& init)
    : weight(init.child("weight").normal({out, in}, 1.0 / std::sqrt(static_cast<double>(in)))) {
    if (with_bias) bias.emplace(Tensor(Shape{out}));
}

ag::Var Linear::forward(const ag::Var& x) const {
    ag::Var y = ag::linear(x, weight.var(), bias ? bias->var() : ag::Var());
    if (adapter_) y = ag::add(y, ag::linear(ag::linear(x, adapter_->down.var()), adapter_->up.var()));
    return y;
}

void Linear::visit(const std::string& prefix, const ParamVisitor& f) {
    f(join_name(prefix, "weight"), weight);
    if (bias) f(join_name(prefix, "bias"), *bias);
    if (adapter_) {
        f(join_name(prefix, "lora_down"), adapter_->down);
        f(join_name(prefix, "lora_up"), adapter_->up);
    }
}

void Linear::visit(const std::string& prefix, const ConstParamVisitor& f) const {
    f(join_name(prefix, "weight"), weight);
    if (bias) f(join_name(prefix, "bias"), *bias);
    if (adapter_) {
        f(join_name(prefix, "lora_down"), adapter_->down);
        f(join_name(prefix, "lora_up"), adapter_->up);
    }
}

void Linear::attach_low_rank(int rank, const Init& init) {
    if (rank < 1) throw InvalidArgument("low-rank adapter rank must be >= 1");
    const auto in = in_features(), out = out_features();
    LowRankAdapter a;
    a.rank = rank;
    a.down = Param(init.child("lora_down").normal({rank, in}, 1.0 / std::sqrt(static_cast<double>(in))));
    a.up = Param(Tensor({out, static_cast<std::int64_t>(rank)}));
    adapter_ = std::move(a);
}

Conv2d::Conv2d(std::int64_t in, std::int64_t out, int kernel, int stride_, int padding_, const Init& init)
    : weight(init.child("weight").normal({out, in, kernel, kernel},
                                         1.0 / std::sqrt(static_cast<double>(in * kernel * kernel)))),
      bias(Tensor(Shape{out})),
      stride(stride_),
      padding(padding_) {}

ag::Var Conv2d::forward(const ag::Var& x) const { return ag::conv2d(x, weight.var(), bias.var(), stride, padding); }

void Conv2d::visit(const std::string& prefix, const ParamVisitor& f) {
    f(join_name(prefix, "weight"), weight);
    f(join_name(prefix, "bias"), bias);
}

void Conv2d::visit(const std::string& prefix, const ConstParamVisitor& f) const {
    f(join_name(prefix, "weight"), weight);
    f(join_name(prefix, "bias"), bias);
}

GroupNorm::GroupNorm(std::int64_t channels, int groups_)
    : gamma(Tensor(Shape{channels}, 1.0)), beta(Tensor(Shape{channels})), groups(groups_) {}

ag::Var GroupNorm::forward(const ag::Var& x) const { return ag::group_norm(x, gamma.var(), beta.var(), groups); }

void GroupNorm::visit(const std::string& prefix, const ParamVisitor& f) {
    f(join_name(prefix, "gamma"), gamma);
    f(join_name(prefix, "beta"), beta);
}

void GroupNorm::visit(const std::string& prefix, const ConstParamVisitor& f) const {
    f(join_name(prefix, "gamma"), gamma);
    f(join_name(prefix, "beta"), beta);
}

LayerNorm::LayerNorm(std::int64_t dim) : gamma(Tensor(Shape{dim}, 1.0)), beta(Tensor(Shape{dim})) {}

ag::Var LayerNorm::forward(const ag::Var& x) const { return ag::layer_norm(x, gamma.var(), beta.var()); }

void LayerNorm::visit(const std::string& prefix, const ParamVisitor& f) {
    f(join_name(prefix, "gamma"), gamma);
    f(join_name(prefix, "beta"), beta);
}

void LayerNorm::visit(const std::string& prefix, const ConstParamVisitor& f) const {
    f(join_name(prefix, "gamma"), gamma);
    f(join_name(prefix, "beta"), beta);
}

int group_count(std::int64_t channels, int preferred) {
    for (int g = preferred; g > 1; --g)
        if (channels % g == 0) return g;
    return 1;
}

}  // namespace vtonlab::nn
