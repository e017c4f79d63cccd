#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vtonlab/encoders.hpp"

namespace vtonlab {

// Frozen network mapping images to a global embedding and per-layer maps.
class FeatureExtractor {
public:
    virtual ~FeatureExtractor() = default;
    virtual ImageFeatures extract(const Tensor& image) const = 0;  // (3,H,W) or (N,3,H,W)
    virtual std::string name() const = 0;
    virtual std::string hash() const = 0;
};

class EncoderFeatureExtractor : public FeatureExtractor {
public:
    explicit EncoderFeatureExtractor(ImageEncoder encoder);

    ImageFeatures extract(const Tensor& image) const override;
    std::string name() const override { return "image_encoder"; }
    std::string hash() const override { return hash_; }

private:
    ImageEncoder encoder_;
    std::string hash_;
};

// The frozen encoder a bundle of this seed would carry.
std::unique_ptr<FeatureExtractor> default_feature_extractor(std::uint64_t seed = 0);

// 11x11 Gaussian window (sigma 1.5), valid windows only, averaged over
// windows and channels.
double ssim(const Tensor& a, const Tensor& b);

// Mean over layers of the mean squared difference of channel-normalised
// features.
double lpips(const Tensor& a, const Tensor& b, const FeatureExtractor& fx);

// Cosine similarity of global embeddings.
double clip_i(const Tensor& a, const Tensor& b, const FeatureExtractor& fx);
double cosine_similarity(std::span<const double> a, std::span<const double> b);

// Principal square root of a symmetric positive semi-definite matrix (d, d).
Tensor sqrtm_psd(const Tensor& m);

// Frechet distance between Gaussians fitted to the rows of two (n, d)
// embedding matrices. Each needs at least d + 1 rows.
double frechet_distance(const Tensor& emb_a, const Tensor& emb_b);
double fid(std::span<const Tensor> set_a, std::span<const Tensor> set_b, const FeatureExtractor& fx);

struct PairMetrics {
    std::string file;
    double ssim = 0.0;
    double lpips = 0.0;
    double clip_i = 0.0;
};

struct MetricsReport {
    double ssim = 0.0;
    double lpips = 0.0;
    double clip_i = 0.0;
    std::optional<double> fid;  // absent when either set is too small
    std::size_t n_pairs = 0;
    std::string extractor_hash;
    std::string timestamp;
    std::vector<PairMetrics> pairs;

    std::string to_json() const;
    std::string pairs_csv() const;
};

// Pairs PNGs by file name. Throws PairingError naming unmatched files.
MetricsReport evaluate_dataset(const std::filesystem::path& results_dir,
                               const std::filesystem::path& references_dir, const FeatureExtractor& fx);
MetricsReport evaluate_pairs(std::span<const Tensor> results, std::span<const Tensor> references,
                             std::span<const std::string> names, const FeatureExtractor& fx);

}  // namespace vtonlab
