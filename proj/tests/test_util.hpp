#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "vtonlab/model_bundle.hpp"
#include "vtonlab/rng.hpp"
#include "vtonlab/synthetic.hpp"
#include "vtonlab/tensor.hpp"

namespace vtonlab::test {

inline Tensor random_tensor(Shape shape, std::uint64_t seed, double stddev = 1.0) {
    Rng rng(seed);
    return Tensor::randn(std::move(shape), rng, stddev);
}

inline Tensor random_image(std::int64_t c, std::int64_t h, std::int64_t w, std::uint64_t seed) {
    Rng rng(seed);
    return Tensor::uniform({c, h, w}, rng, 0.0, 1.0);
}

// Reduced model and data geometry for fast tests.
inline BundleConfig small_bundle_config(std::uint64_t seed = 0) {
    BundleConfig c;
    c.image_height = 32;
    c.image_width = 24;
    c.unet.base_width = 16;
    c.unet.context_dim = 16;
    c.image_encoder_widths = {8, 8, 16};
    c.text_max_tokens = 12;
    c.seed = seed;
    return c;
}

inline SyntheticSpec small_synthetic_spec(int n, std::uint64_t seed = 0) {
    SyntheticSpec s;
    s.n_samples = n;
    s.height = 32;
    s.width = 24;
    s.seed = seed;
    return s;
}

class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() / ("vtonlab_" + tag + "_" + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& p) const { return path_ / p; }

private:
    std::filesystem::path path_;
};

}  // namespace vtonlab::test
