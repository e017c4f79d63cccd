#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>

#include "vtonlab/autograd.hpp"

namespace vtonlab::nn {

// A named learnable array. Copying a Param deep-copies its value so that
// modules (and whole bundles) have value semantics.
class Param {
public:
    Param() = default;
    explicit Param(Tensor init, bool trainable = true);
    Param(const Param& other);
    Param& operator=(const Param& other);
    Param(Param&&) noexcept = default;
    Param& operator=(Param&&) noexcept = default;

    const ag::Var& var() const { return var_; }
    const Tensor& value() const { return var_.value(); }
    Tensor& mutable_value() { return var_.node().value; }
    const Tensor& grad() const { return var_.grad(); }
    bool has_grad() const { return var_.defined() && var_.grad().shape() == var_.value().shape(); }
    void zero_grad();

    bool trainable() const { return var_.requires_grad(); }
    void set_trainable(bool on) { var_.node().requires_grad = on; }

private:
    ag::Var var_;
};

using ParamVisitor = std::function<void(const std::string& name, Param& param)>;
using ConstParamVisitor = std::function<void(const std::string& name, const Param& param)>;

inline std::string join_name(const std::string& prefix, const std::string& leaf) {
    return prefix.empty() ? leaf : prefix + "." + leaf;
}

// Deterministic per-parameter initialisation: each array is seeded from the
// bundle seed and its own dotted path, independent of construction order.
class Init {
public:
    Init(std::uint64_t seed, std::string path) : seed_(seed), path_(std::move(path)) {}
    Init child(const std::string& name) const { return Init(seed_, join_name(path_, name)); }
    Tensor normal(Shape shape, double stddev) const;
    std::uint64_t seed() const { return seed_; }
    const std::string& path() const { return path_; }

private:
    std::uint64_t seed_;
    std::string path_;
};

// Rank-r additive factor on a Linear weight: W + up * down.
struct LowRankAdapter {
    Param down;  // (r, in), small random
    Param up;    // (out, r), zero so the adapted layer starts as the base layer
    int rank = 0;
};

class Linear {
public:
    Linear() = default;
    Linear(std::int64_t in, std::int64_t out, bool bias, const Init& init);

    ag::Var forward(const ag::Var& x) const;
    void visit(const std::string& prefix, const ParamVisitor& f);
    void visit(const std::string& prefix, const ConstParamVisitor& f) const;

    void attach_low_rank(int rank, const Init& init);
    bool has_adapter() const { return adapter_.has_value(); }
    const LowRankAdapter* adapter() const { return adapter_ ? &*adapter_ : nullptr; }

    std::int64_t in_features() const { return weight.value().shape()[1]; }
    std::int64_t out_features() const { return weight.value().shape()[0]; }

    Param weight;
    std::optional<Param> bias;

private:
    std::optional<LowRankAdapter> adapter_;
};

class Conv2d {
public:
    Conv2d() = default;
    Conv2d(std::int64_t in, std::int64_t out, int kernel, int stride, int padding, const Init& init);

    ag::Var forward(const ag::Var& x) const;
    void visit(const std::string& prefix, const ParamVisitor& f);
    void visit(const std::string& prefix, const ConstParamVisitor& f) const;

    std::int64_t in_channels() const { return weight.value().shape()[1]; }
    std::int64_t out_channels() const { return weight.value().shape()[0]; }

    Param weight;
    Param bias;
    int stride = 1;
    int padding = 0;
};

class GroupNorm {
public:
    GroupNorm() = default;
    GroupNorm(std::int64_t channels, int groups);

    ag::Var forward(const ag::Var& x) const;
    void visit(const std::string& prefix, const ParamVisitor& f);
    void visit(const std::string& prefix, const ConstParamVisitor& f) const;

    Param gamma;
    Param beta;
    int groups = 1;
};

class LayerNorm {
public:
    LayerNorm() = default;
    explicit LayerNorm(std::int64_t dim);

    ag::Var forward(const ag::Var& x) const;
    void visit(const std::string& prefix, const ParamVisitor& f);
    void visit(const std::string& prefix, const ConstParamVisitor& f) const;

    Param gamma;
    Param beta;
};

// Largest group count <= preferred that divides channels.
int group_count(std::int64_t channels, int preferred = 8);

}  // namespace vtonlab::nn
