#pragma once

#include <cstdint>
#include <initializer_list>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace vtonlab {

class Rng;

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Fixed 64-byte alignment keeps vectorised kernels on the same code path for
// every buffer, so results are bitwise reproducible.
template <class T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t alignment{64};

    AlignedAllocator() noexcept = default;
    template <class U>
    AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, alignment); }

    template <class U>
    bool operator==(const AlignedAllocator<U>&) const noexcept {
        return true;
    }
};

using TensorStorage = std::vector<double, AlignedAllocator<double>>;

// Dense row-major array of doubles. Value semantics: copies are deep.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> values);

    static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape()); }
    static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0);
    static Tensor uniform(Shape shape, Rng& rng, double lo, double hi);

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::int64_t dim(std::size_t i) const;
    std::int64_t numel() const noexcept { return static_cast<std::int64_t>(data_.size()); }
    bool empty() const noexcept { return data_.empty(); }

    double* data() noexcept { return data_.data(); }
    const double* data() const noexcept { return data_.data(); }
    std::span<double> values() noexcept { return data_; }
    std::span<const double> values() const noexcept { return data_; }

    double& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
    double operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

    // Rank-3 (C,H,W) and rank-4 (N,C,H,W) element access.
    double& at(std::int64_t c, std::int64_t h, std::int64_t w);
    double at(std::int64_t c, std::int64_t h, std::int64_t w) const;
    double& at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w);
    double at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const;

    Tensor reshaped(Shape shape) const;
    void fill(double v);
    bool all_finite() const;

    // Slice [begin, end) along axis 0.
    Tensor slice0(std::int64_t begin, std::int64_t end) const;
    // Channels [begin, end) of an (N,C,H,W) tensor.
    Tensor channels(std::int64_t begin, std::int64_t end) const;

    double sum() const;
    double max_abs() const;

    friend bool operator==(const Tensor& a, const Tensor& b) = default;

private:
    Shape shape_;
    TensorStorage data_;
};

void require_same_shape(const Tensor& a, const Tensor& b, const char* what);

Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(double s, const Tensor& a);
Tensor& operator+=(Tensor& a, const Tensor& b);

double max_abs_diff(const Tensor& a, const Tensor& b);

// Concatenate along axis 0 (batch) or axis 1 (channels/tokens).
Tensor concat(std::span<const Tensor> parts, int axis);

}  // namespace vtonlab
