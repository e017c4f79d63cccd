#include "vtonlab/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "vtonlab/errors.hpp"
#include "vtonlab/rng.hpp"

namespace vtonlab {

std::int64_t shape_numel(const Shape& shape) {
    std::int64_t n = 1;
    for (auto d : shape) {
        if (d < 0) throw InvalidArgument("negative dimension in shape " + shape_str(shape));
        n *= d;
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(static_cast<std::size_t>(shape_numel(shape_)), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), data_(values.begin(), values.end()) {
    if (static_cast<std::int64_t>(data_.size()) != shape_numel(shape_))
        throw InvalidArgument("value count " + std::to_string(data_.size()) + " does not match shape " +
                              shape_str(shape_));
}

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev) {
    Tensor t(std::move(shape));
    for (auto& v : t.data_) v = stddev * rng.normal();
    return t;
}

Tensor Tensor::uniform(Shape shape, Rng& rng, double lo, double hi) {
    Tensor t(std::move(shape));
    for (auto& v : t.data_) v = rng.uniform(lo, hi);
    return t;
}

std::int64_t Tensor::dim(std::size_t i) const {
    if (i >= shape_.size()) throw InvalidArgument("axis out of range for shape " + shape_str(shape_));
    return shape_[i];
}

double& Tensor::at(std::int64_t c, std::int64_t h, std::int64_t w) {
    return data_[static_cast<std::size_t>((c * shape_[1] + h) * shape_[2] + w)];
}
double Tensor::at(std::int64_t c, std::int64_t h, std::int64_t w) const {
    return data_[static_cast<std::size_t>((c * shape_[1] + h) * shape_[2] + w)];
}
double& Tensor::at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) {
    return data_[static_cast<std::size_t>(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
}
double Tensor::at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
    return data_[static_cast<std::size_t>(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
}

Tensor Tensor::reshaped(Shape shape) const {
    if (shape_numel(shape) != numel())
        throw InvalidArgument("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    Tensor out = *this;
    out.shape_ = std::move(shape);
    return out;
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor Tensor::slice0(std::int64_t begin, std::int64_t end) const {
    if (rank() == 0 || begin < 0 || end > shape_[0] || begin > end)
        throw InvalidArgument("slice0 out of range for " + shape_str(shape_));
    const std::int64_t inner = shape_[0] == 0 ? 0 : numel() / shape_[0];
    Shape s = shape_;
    s[0] = end - begin;
    Tensor out(std::move(s));
    std::copy(data_.begin() + begin * inner, data_.begin() + end * inner, out.data_.begin());
    return out;
}

Tensor Tensor::channels(std::int64_t begin, std::int64_t end) const {
    if (rank() != 4 || begin < 0 || end > shape_[1] || begin > end)
        throw InvalidArgument("channel slice out of range for " + shape_str(shape_));
    const std::int64_t n = shape_[0], c = shape_[1], hw = shape_[2] * shape_[3];
    Tensor out({n, end - begin, shape_[2], shape_[3]});
    for (std::int64_t b = 0; b < n; ++b)
        std::copy(data_.begin() + (b * c + begin) * hw, data_.begin() + (b * c + end) * hw,
                  out.data_.begin() + b * (end - begin) * hw);
    return out;
}

double Tensor::sum() const {
    double s = 0.0;
    for (double v : data_) s += v;
    return s;
}

double Tensor::max_abs() const {
    double m = 0.0;
    for (double v : data_) m = std::max(m, std::abs(v));
    return m;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (a.shape() != b.shape())
        throw InvalidArgument(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                              shape_str(b.shape()));
}

Tensor operator+(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    Tensor out = a;
    out += b;
    return out;
}

Tensor operator-(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    Tensor out = a;
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] -= b[i];
    return out;
}

Tensor operator*(double s, const Tensor& a) {
    Tensor out = a;
    for (auto& v : out.values()) v *= s;
    return out;
}

Tensor& operator+=(Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    for (std::int64_t i = 0; i < a.numel(); ++i) a[i] += b[i];
    return a;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "max_abs_diff");
    double m = 0.0;
    for (std::int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

Tensor concat(std::span<const Tensor> parts, int axis) {
    if (parts.empty()) throw InvalidArgument("concat of zero tensors");
    if (axis != 0 && axis != 1) throw InvalidArgument("concat supports axis 0 or 1");
    const Shape& ref = parts.front().shape();
    if (ref.size() < static_cast<std::size_t>(axis + 1)) throw InvalidArgument("concat axis exceeds rank");
    Shape out_shape = ref;
    out_shape[axis] = 0;
    for (const auto& p : parts) {
        if (p.rank() != ref.size()) throw InvalidArgument("concat rank mismatch");
        for (std::size_t d = 0; d < ref.size(); ++d)
            if (static_cast<int>(d) != axis && p.shape()[d] != ref[d])
                throw InvalidArgument("concat shape mismatch " + shape_str(p.shape()) + " vs " + shape_str(ref));
        out_shape[axis] += p.shape()[axis];
    }
    Tensor out(out_shape);
    const std::int64_t outer = axis == 0 ? 1 : ref[0];
    std::int64_t inner = 1;
    for (std::size_t d = static_cast<std::size_t>(axis) + 1; d < ref.size(); ++d) inner *= ref[d];
    double* dst = out.data();
    for (std::int64_t o = 0; o < outer; ++o) {
        for (const auto& p : parts) {
            const std::int64_t chunk = p.shape()[axis] * inner;
            std::copy(p.data() + o * chunk, p.data() + (o + 1) * chunk, dst);
            dst += chunk;
        }
    }
    return out;
}

}  // namespace vtonlab
