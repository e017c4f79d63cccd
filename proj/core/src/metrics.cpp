#include "vtonlab/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "vtonlab/errors.hpp"
#include "vtonlab/hash.hpp"
#include "vtonlab/image.hpp"
#include "vtonlab/model_bundle.hpp"

namespace vtonlab {

namespace {

using Matrix = Eigen::MatrixXd;

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

std::vector<double> gaussian_window() {
    std::vector<double> g(kWindow);
    double sum = 0.0;
    for (int i = 0; i < kWindow; ++i) {
        const double d = i - kWindow / 2;
        g[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * kSigma * kSigma));
        sum += g[static_cast<std::size_t>(i)];
    }
    for (double& v : g) v /= sum;
    return g;
}

// Valid separable filtering of an (H, W) plane.
std::vector<double> filter_valid(const double* src, std::int64_t h, std::int64_t w, const std::vector<double>& g) {
    const std::int64_t oh = h - kWindow + 1, ow = w - kWindow + 1;
    std::vector<double> rows(static_cast<std::size_t>(h * ow));
    for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t x = 0; x < ow; ++x) {
            double s = 0.0;
            for (int k = 0; k < kWindow; ++k) s += g[static_cast<std::size_t>(k)] * src[y * w + x + k];
            rows[static_cast<std::size_t>(y * ow + x)] = s;
        }
    std::vector<double> out(static_cast<std::size_t>(oh * ow));
    for (std::int64_t y = 0; y < oh; ++y)
        for (std::int64_t x = 0; x < ow; ++x) {
            double s = 0.0;
            for (int k = 0; k < kWindow; ++k) s += g[static_cast<std::size_t>(k)] * rows[static_cast<std::size_t>((y + k) * ow + x)];
            out[static_cast<std::size_t>(y * ow + x)] = s;
        }
    return out;
}

Matrix to_matrix(const Tensor& t) {
    Matrix m(t.dim(0), t.dim(1));
    for (std::int64_t i = 0; i < t.dim(0); ++i)
        for (std::int64_t j = 0; j < t.dim(1); ++j) m(i, j) = t[i * t.dim(1) + j];
    return m;
}

Matrix psd_sqrt(const Matrix& m) {
    const Matrix sym = 0.5 * (m + m.transpose());
    Eigen::SelfAdjointEigenSolver<Matrix> eig(sym);
    const Eigen::VectorXd vals = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return eig.eigenvectors() * vals.asDiagonal() * eig.eigenvectors().transpose();
}

void moments(const Matrix& x, Eigen::VectorXd& mu, Matrix& cov) {
    mu = x.colwise().mean().transpose();
    const Matrix centered = x.rowwise() - mu.transpose();
    cov = centered.transpose() * centered / static_cast<double>(x.rows() - 1);
}

Tensor stack_images(std::span<const Tensor> images) {
    std::vector<Tensor> rows;
    for (const Tensor& img : images) {
        if (img.rank() != 3) throw InvalidArgument("expected (3, H, W) images");
        rows.push_back(img.reshaped({1, img.dim(0), img.dim(1), img.dim(2)}));
    }
    return concat(rows, 0);
}

std::string utc_timestamp() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::ostringstream out;
    out << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return out.str();
}

std::map<std::string, std::filesystem::path> png_files(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) throw IoError(dir.string() + " is not a directory");
    std::map<std::string, std::filesystem::path> out;
    for (const auto& entry : std::filesystem::directory_iterator(dir))
        if (entry.is_regular_file() && entry.path().extension() == ".png")
            out.emplace(entry.path().filename().string(), entry.path());
    return out;
}

}  // namespace

EncoderFeatureExtractor::EncoderFeatureExtractor(ImageEncoder encoder) : encoder_(std::move(encoder)) {
    std::uint64_t h = fnv1a64(name());
    encoder_.visit("", [&](const std::string& n, const nn::Param& p) {
        h = fnv1a64(n, h);
        h = fnv1a64(p.value().values(), h);
    });
    hash_ = hex64(h);
}

ImageFeatures EncoderFeatureExtractor::extract(const Tensor& image) const { return encoder_.encode(image); }

std::unique_ptr<FeatureExtractor> default_feature_extractor(std::uint64_t seed) {
    BundleConfig config;
    config.seed = seed;
    return std::make_unique<EncoderFeatureExtractor>(
        ImageEncoder(config.image_encoder_widths, nn::Init(seed, "image_encoder")));
}

double ssim(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "ssim");
    if (a.rank() != 3) throw InvalidArgument("ssim expects (C, H, W) images");
    const std::int64_t c = a.dim(0), h = a.dim(1), w = a.dim(2);
    if (h < kWindow || w < kWindow) throw InvalidArgument("ssim needs images of at least 11x11");
    const auto g = gaussian_window();
    const std::int64_t hw = h * w;
    double total = 0.0;
    std::size_t count = 0;
    std::vector<double> xx(static_cast<std::size_t>(hw)), yy(xx.size()), xy(xx.size());
    for (std::int64_t ch = 0; ch < c; ++ch) {
        const double* x = a.data() + ch * hw;
        const double* y = b.data() + ch * hw;
        for (std::int64_t i = 0; i < hw; ++i) {
            xx[static_cast<std::size_t>(i)] = x[i] * x[i];
            yy[static_cast<std::size_t>(i)] = y[i] * y[i];
            xy[static_cast<std::size_t>(i)] = x[i] * y[i];
        }
        const auto mx = filter_valid(x, h, w, g);
        const auto my = filter_valid(y, h, w, g);
        const auto sxx = filter_valid(xx.data(), h, w, g);
        const auto syy = filter_valid(yy.data(), h, w, g);
        const auto sxy = filter_valid(xy.data(), h, w, g);
        for (std::size_t i = 0; i < mx.size(); ++i) {
            const double vx = sxx[i] - mx[i] * mx[i];
            const double vy = syy[i] - my[i] * my[i];
            const double cxy = sxy[i] - mx[i] * my[i];
            total += ((2.0 * mx[i] * my[i] + kC1) * (2.0 * cxy + kC2)) /
                     ((mx[i] * mx[i] + my[i] * my[i] + kC1) * (vx + vy + kC2));
        }
        count += mx.size();
    }
    return total / static_cast<double>(count);
}

double lpips(const Tensor& a, const Tensor& b, const FeatureExtractor& fx) {
    require_same_shape(a, b, "lpips");
    const ImageFeatures fa = fx.extract(a);
    const ImageFeatures fb = fx.extract(b);
    double total = 0.0;
    for (std::size_t l = 0; l < fa.layers.size(); ++l) {
        const Tensor& la = fa.layers[l];
        const Tensor& lb = fb.layers[l];
        const std::int64_t n = la.dim(0), c = la.dim(1), hw = la.dim(2) * la.dim(3);
        double sum = 0.0;
        for (std::int64_t s = 0; s < n; ++s)
            for (std::int64_t p = 0; p < hw; ++p) {
                double na = 0.0, nb = 0.0;
                for (std::int64_t ch = 0; ch < c; ++ch) {
                    const std::int64_t k = (s * c + ch) * hw + p;
                    na += la[k] * la[k];
                    nb += lb[k] * lb[k];
                }
                na = std::sqrt(na) + 1e-10;
                nb = std::sqrt(nb) + 1e-10;
                for (std::int64_t ch = 0; ch < c; ++ch) {
                    const std::int64_t k = (s * c + ch) * hw + p;
                    const double d = la[k] / na - lb[k] / nb;
                    sum += d * d;
                }
            }
        total += sum / static_cast<double>(la.numel());
    }
    return total / static_cast<double>(fa.layers.size());
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw InvalidArgument("cosine similarity needs equal-length vectors");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) throw DegenerateEmbedding("cannot compare a zero-norm embedding");
    return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

double clip_i(const Tensor& a, const Tensor& b, const FeatureExtractor& fx) {
    require_same_shape(a, b, "clip_i");
    return cosine_similarity(fx.extract(a).embedding.values(), fx.extract(b).embedding.values());
}

Tensor sqrtm_psd(const Tensor& m) {
    if (m.rank() != 2 || m.dim(0) != m.dim(1)) throw InvalidArgument("sqrtm_psd expects a square matrix");
    const Matrix r = psd_sqrt(to_matrix(m));
    Tensor out(m.shape());
    for (std::int64_t i = 0; i < m.dim(0); ++i)
        for (std::int64_t j = 0; j < m.dim(1); ++j) out[i * m.dim(1) + j] = r(i, j);
    return out;
}

double frechet_distance(const Tensor& emb_a, const Tensor& emb_b) {
    if (emb_a.rank() != 2 || emb_b.rank() != 2 || emb_a.dim(1) != emb_b.dim(1))
        throw InvalidArgument("frechet distance expects (n, d) embeddings of equal width");
    const std::int64_t d = emb_a.dim(1);
    if (emb_a.dim(0) < d + 1 || emb_b.dim(0) < d + 1)
        throw InsufficientSamples("frechet distance needs at least " + std::to_string(d + 1) +
                                  " samples per set, got " + std::to_string(emb_a.dim(0)) + " and " +
                                  std::to_string(emb_b.dim(0)));
    Eigen::VectorXd mu_a, mu_b;
    Matrix cov_a, cov_b;
    moments(to_matrix(emb_a), mu_a, cov_a);
    moments(to_matrix(emb_b), mu_b, cov_b);
    const Matrix s = psd_sqrt(cov_a);
    const Matrix cross = psd_sqrt(s * cov_b * s);
    return (mu_a - mu_b).squaredNorm() + cov_a.trace() + cov_b.trace() - 2.0 * cross.trace();
}

double fid(std::span<const Tensor> set_a, std::span<const Tensor> set_b, const FeatureExtractor& fx) {
    if (set_a.empty() || set_b.empty()) throw InsufficientSamples("fid needs non-empty image sets");
    return frechet_distance(fx.extract(stack_images(set_a)).embedding, fx.extract(stack_images(set_b)).embedding);
}

MetricsReport evaluate_pairs(std::span<const Tensor> results, std::span<const Tensor> references,
                             std::span<const std::string> names, const FeatureExtractor& fx) {
    if (results.size() != references.size() || results.size() != names.size())
        throw InvalidArgument("evaluate_pairs needs equally many results, references and names");
    if (results.empty()) throw InsufficientSamples("no pairs to evaluate");
    MetricsReport report;
    report.n_pairs = results.size();
    report.extractor_hash = fx.hash();
    report.timestamp = utc_timestamp();
    for (std::size_t i = 0; i < results.size(); ++i) {
        PairMetrics p{names[i], ssim(results[i], references[i]), lpips(results[i], references[i], fx),
                      clip_i(results[i], references[i], fx)};
        report.ssim += p.ssim;
        report.lpips += p.lpips;
        report.clip_i += p.clip_i;
        report.pairs.push_back(std::move(p));
    }
    const auto n = static_cast<double>(results.size());
    report.ssim /= n;
    report.lpips /= n;
    report.clip_i /= n;
    try {
        report.fid = fid(results, references, fx);
    } catch (const InsufficientSamples&) {
        report.fid.reset();
    }
    return report;
}

MetricsReport evaluate_dataset(const std::filesystem::path& results_dir,
                               const std::filesystem::path& references_dir, const FeatureExtractor& fx) {
    const auto results = png_files(results_dir);
    const auto references = png_files(references_dir);
    std::vector<std::string> unmatched;
    for (const auto& [name, _] : results)
        if (!references.count(name)) unmatched.push_back(name + " (no reference)");
    for (const auto& [name, _] : references)
        if (!results.count(name)) unmatched.push_back(name + " (no result)");
    if (!unmatched.empty()) {
        std::string msg = "unpaired files:";
        for (const auto& u : unmatched) msg += " " + u;
        throw PairingError(msg);
    }
    if (results.empty()) throw PairingError("no PNG files in " + results_dir.string());
    std::vector<Tensor> res, ref;
    std::vector<std::string> names;
    for (const auto& [name, path] : results) {
        names.push_back(name);
        res.push_back(read_png(path));
        ref.push_back(read_png(references.at(name)));
    }
    return evaluate_pairs(res, ref, names, fx);
}

std::string MetricsReport::to_json() const {
    nlohmann::json j{{"ssim", ssim},
                     {"lpips", lpips},
                     {"clip_i", clip_i},
                     {"fid", fid ? nlohmann::json(*fid) : nlohmann::json(nullptr)},
                     {"n_pairs", n_pairs},
                     {"extractor_hash", extractor_hash},
                     {"timestamp", timestamp}};
    return j.dump(2) + "\n";
}

std::string MetricsReport::pairs_csv() const {
    std::ostringstream out;
    out.precision(10);
    out << "file,ssim,lpips,clip_i\n";
    for (const PairMetrics& p : pairs) out << p.file << ',' << p.ssim << ',' << p.lpips << ',' << p.clip_i << '\n';
    return out.str();
}

}  // namespace vtonlab
