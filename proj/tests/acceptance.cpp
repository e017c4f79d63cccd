#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "oracles.hpp"
#include "vtonlab/attention.hpp"
#include "vtonlab/conditioning.hpp"
#include "vtonlab/customization.hpp"
#include "vtonlab/image.hpp"
#include "vtonlab/metrics.hpp"
#include "vtonlab/pipeline.hpp"
#include "vtonlab/synthetic.hpp"
#include "vtonlab/training.hpp"

using namespace vtonlab;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

Tensor randn(Shape shape, std::uint64_t seed) {
    Rng rng(seed);
    return Tensor::randn(std::move(shape), rng);
}

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
    char buf[256];
    std::snprintf(buf, sizeof buf, f, a, b, c, d);
    return buf;
}

bool starts_with(const std::string& s, const std::string& p) { return s.rfind(p, 0) == 0; }

double mean(const std::vector<double>& v, std::size_t from, std::size_t to) {
    double s = 0.0;
    for (std::size_t i = from; i < to; ++i) s += v[i];
    return s / static_cast<double>(to - from);
}

// Garment region on a white background.
Tensor masked_region(const Tensor& image, const Tensor& mask) {
    Tensor out(image.shape());
    const std::int64_t hw = mask.numel();
    for (std::int64_t c = 0; c < 3; ++c)
        for (std::int64_t i = 0; i < hw; ++i) out[c * hw + i] = mask[i] * image[c * hw + i] + (1.0 - mask[i]);
    return out;
}

TryonRequest request_for(const TrainingSample& s, std::uint64_t seed) {
    TryonRequest r{s.person, s.garment, s.mask, s.pose, s.attrs};
    r.seed = seed;
    return r;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

struct Shared {
    BundleConfig config;
    NoiseSchedule sched = make_schedule(200, ScheduleKind::scaled_linear);
    ModelBundle trained;
    bool have_trained = false;
    double train_seconds = 0.0;
};

Outcome zero_init(Shared& sh) {
    UNetConfig uc = sh.config.unet;
    uc.image_prompt = true;
    const UNet source(uc, nn::Init(3, "unet"));
    UNet wide = source;
    wide.expand_input_channels(13);
    double worst = 0.0;
    const std::int64_t h = sh.config.latent_height(), w = sh.config.latent_width();
    for (std::uint64_t k = 0; k < 10; ++k) {
        const Tensor x = randn({1, 13, h, w}, 100 + k);
        const std::vector<int> t{static_cast<int>(1 + 19 * k)};
        const Tensor text = randn({1, 6, uc.context_dim}, 200 + k);
        const Tensor image = randn({1, 4, uc.context_dim}, 300 + k);
        ag::NoGradGuard g;
        UNetInputs a{ag::Var::constant(x), t, ag::Var::constant(text), ag::Var::constant(image)};
        UNetInputs b = a;
        b.x = ag::Var::constant(x.channels(0, 4));
        worst = std::max(worst, max_abs_diff(wide.forward(a).value(), source.forward(b).value()));
    }
    return {worst < 1e-6, fmt("max abs diff %.2e", worst)};
}

Outcome fusion_oracle(Shared&) {
    double worst = 0.0;
    for (std::uint64_t k = 0; k < 20; ++k) {
        Rng rng(500 + k);
        const int heads = 1 + static_cast<int>(rng.uniform_int(0, 1));
        const std::int64_t d = 4 * heads, n = rng.uniform_int(1, 9), b = rng.uniform_int(1, 3);
        SelfAttnWeights w{Tensor::randn({d, d}, rng), Tensor::randn({d, d}, rng), Tensor::randn({d, d}, rng),
                          Tensor::randn({d, d}, rng), heads};
        const Tensor tryon = Tensor::randn({b, n, d}, rng);
        const Tensor garment = Tensor::randn({b, n, d}, rng);
        const Tensor full =
            oracle::full_self_attention(oracle::concat_tokens(tryon, garment), w.w_q, w.w_k, w.w_v, w.w_out, heads);
        const Tensor got =
            garment_fused_self_attention({tryon, TokenOrigin::spatial}, {garment, TokenOrigin::garment}, w).data;
        worst = std::max(worst, max_abs_diff(got, oracle::first_tokens(full, n)));
    }
    return {worst < 1e-6, fmt("max abs diff %.2e over 20 cases", worst)};
}

Outcome additivity(Shared&) {
    double worst = 0.0;
    for (std::uint64_t k = 0; k < 20; ++k) {
        Rng rng(700 + k);
        const int heads = 1 + static_cast<int>(rng.uniform_int(0, 1));
        const std::int64_t d = 4 * heads, dc = rng.uniform_int(3, 8), b = rng.uniform_int(1, 3);
        const std::int64_t n = rng.uniform_int(1, 9), lt = rng.uniform_int(1, 8), li = rng.uniform_int(1, 5);
        DecoupledAttnWeights w;
        w.w_q = Tensor::randn({d, d}, rng);
        w.w_kc = Tensor::randn({d, dc}, rng);
        w.w_vc = Tensor::randn({d, dc}, rng);
        w.w_ki = Tensor::randn({d, dc}, rng);
        w.w_vi = Tensor::randn({d, dc}, rng);
        w.w_out = Tensor::randn({d, d}, rng);
        w.heads = heads;
        const Tensor x = Tensor::randn({b, n, d}, rng);
        const Tensor text = Tensor::randn({b, lt, dc}, rng);
        const Tensor image = Tensor::randn({b, li, dc}, rng);
        const Tensor q = oracle::project(x, w.w_q);
        Tensor z = oracle::attention(q, oracle::project(text, w.w_kc), oracle::project(text, w.w_vc), heads);
        z += oracle::attention(q, oracle::project(image, w.w_ki), oracle::project(image, w.w_vi), heads);
        const Tensor got = decoupled_cross_attention({x, TokenOrigin::spatial}, {text, TokenOrigin::text},
                                                     {image, TokenOrigin::image_prompt}, w)
                               .data;
        worst = std::max(worst, max_abs_diff(got, oracle::project(z, w.w_out)));
    }
    return {worst < 1e-6, fmt("max abs diff %.2e over 20 cases", worst)};
}

Outcome cfg_identities(Shared& sh) {
    const ModelBundle bundle = ModelBundle::create(sh.config);
    SyntheticSpec spec;
    spec.n_samples = 1;
    const TrainingSample s = render_dataset(spec)[0];
    const TryonConditioning cond = prepare_conditioning(request_for(s, 0), bundle);
    const Tensor z = randn({1, 4, sh.config.latent_height(), sh.config.latent_width()}, 9);
    const int t = 137;
    const Tensor c = predict_noise(bundle, z, t, cond, Branch::conditional);
    const Tensor u = predict_noise(bundle, z, t, cond, Branch::unconditional);
    const double one = max_abs_diff(merged_cfg_predict(bundle, z, t, cond, 1.0), c);
    const Tensor two = merged_cfg_predict(bundle, z, t, cond, 2.0);
    double oracle = 0.0;
    for (std::int64_t i = 0; i < two.numel(); ++i) oracle = std::max(oracle, std::abs(two[i] - (2.0 * c[i] - u[i])));
    const double gap = max_abs_diff(c, u);
    return {one < 1e-6 && oracle < 1e-6 && gap > 0.0,
            fmt("s=1 diff %.2e, s=2 oracle diff %.2e, cond/uncond gap %.2e", one, oracle, gap)};
}

Outcome gradient_partition(Shared& sh) {
    ModelBundle bundle = ModelBundle::create(sh.config);
    apply_partition(bundle, partition_parameters(bundle));
    SyntheticSpec spec;
    spec.n_samples = 2;
    spec.seed = 5;
    std::vector<PreparedSample> prepared;
    for (const auto& s : render_dataset(spec)) prepared.push_back(prepare_sample(bundle, s));
    std::vector<const PreparedSample*> members{&prepared[0], &prepared[1]};
    Rng rng(6);
    const TrainingBatch batch = make_batch(bundle, members, AugmentationConfig::none(), 0.0, sh.sched, rng);

    const auto trainable = [](const std::string& n) {
        return starts_with(n, "tryonnet.") || starts_with(n, "image_projection.");
    };
    const auto frozen = [&](const std::string& n) { return !trainable(n); };
    const std::string frozen_before = bundle.hash_where(frozen);
    const std::string trainable_before = bundle.hash_where(trainable);

    const auto probes = test::finite_difference_probes(bundle, batch, sh.sched, 7);
    int agree = 0;
    double worst = 0.0;
    for (const auto& p : probes) {
        const double scale = std::max(std::abs(p.analytic), std::abs(p.numeric));
        worst = std::max(worst, scale > 0.0 ? std::abs(p.analytic - p.numeric) / scale : 0.0);
        if (p.agrees(1e-2) && p.analytic != 0.0) ++agree;
    }

    Adam adam({});
    train_step(batch, bundle, adam, sh.sched, 0);
    const bool frozen_ok = bundle.hash_where(frozen) == frozen_before;
    const bool moved = bundle.hash_where(trainable) != trainable_before;
    const bool probes_ok = agree == static_cast<int>(probes.size()) && probes.size() <= 10 && !probes.empty();
    return {frozen_ok && moved && probes_ok,
            fmt("frozen unchanged %.0f, trainable moved %.0f, %.0f probes agree, worst rel err %.2e", frozen_ok, moved,
                agree, worst)};
}

Outcome overfit(Shared& sh) {
    SyntheticSpec spec;
    spec.n_samples = 8;
    spec.seed = 1;
    const auto data = render_dataset(spec);
    sh.trained = ModelBundle::create(sh.config);
    TrainConfig tc;
    tc.steps = 2000;
    const TrainingReport r = fit(data, sh.trained, tc, sh.sched);
    sh.have_trained = true;
    sh.train_seconds = r.seconds;
    const std::size_t n = r.losses.size();
    const double first = mean(r.losses, 0, 50), last = mean(r.losses, n - 50, n);
    return {last < 0.25 * first, fmt("first-50 mean %.4f, last-50 mean %.4f, ratio %.4f", first, last, last / first)};
}

Outcome end_to_end(Shared& sh) {
    if (!sh.have_trained) return {false, "no trained model"};
    const ModelBundle fresh = ModelBundle::create(sh.config);
    SyntheticSpec spec;
    spec.n_samples = 32;
    spec.first_index = 10000;
    spec.seed = 1;
    const auto held = render_dataset(spec);
    const auto fx = default_feature_extractor(0);
    double ssim_fresh = 0.0, ssim_trained = 0.0, clip_fresh = 0.0, clip_trained = 0.0;
    for (const auto& s : held) {
        const TryonRequest req = request_for(s, 7);
        const Tensor a = tryon(req, fresh, sh.sched).image;
        const Tensor b = tryon(req, sh.trained, sh.sched).image;
        ssim_fresh += ssim(a, s.person);
        ssim_trained += ssim(b, s.person);
        const Tensor truth = masked_region(s.person, s.mask);
        clip_fresh += clip_i(masked_region(a, s.mask), truth, *fx);
        clip_trained += clip_i(masked_region(b, s.mask), truth, *fx);
    }
    const double n = static_cast<double>(held.size());
    ssim_fresh /= n;
    ssim_trained /= n;
    clip_fresh /= n;
    clip_trained /= n;
    return {ssim_trained - ssim_fresh >= 0.05 && clip_trained > clip_fresh,
            fmt("SSIM %.4f -> %.4f, masked CLIP-I %.4f -> %.4f", ssim_fresh, ssim_trained, clip_fresh, clip_trained)};
}

double fixed_noise_loss(const ModelBundle& bundle, const TrainingSample& pair, const NoiseSchedule& sched) {
    const PreparedSample p = prepare_sample(bundle, pair);
    std::vector<const PreparedSample*> members(16, &p);
    Rng rng(4242);
    const TrainingBatch batch = make_batch(bundle, members, AugmentationConfig::none(), 0.0, sched, rng);
    ag::NoGradGuard g;
    return batch_loss(bundle, batch, sched).value()[0];
}

Outcome customization(Shared& sh) {
    if (!sh.have_trained) return {false, "no trained model"};
    SyntheticSpec spec;
    spec.n_samples = 1;
    spec.first_index = 10000;
    spec.seed = 1;
    const TrainingSample pair = render_dataset(spec)[0];
    CustomizationConfig cc;
    cc.steps = 100;
    const CustomizationResult r = customize(sh.trained, pair, cc, sh.sched);
    const auto encoder = [](const std::string& n) {
        return starts_with(n, "tryonnet.down.") || starts_with(n, "tryonnet.mid.");
    };
    const bool frozen_ok = r.bundle.hash_where(encoder) == sh.trained.hash_where(encoder);
    const double loss_base = fixed_noise_loss(sh.trained, pair, sh.sched);
    const double loss_cust = fixed_noise_loss(r.bundle, pair, sh.sched);
    const TryonRequest req = request_for(pair, 7);
    const double ssim_base = ssim(tryon(req, sh.trained, sh.sched).image, pair.person);
    const double ssim_cust = ssim(tryon(req, r.bundle, sh.sched).image, pair.person);
    return {frozen_ok && loss_cust < loss_base && ssim_cust > ssim_base,
            fmt("down/mid identical %.0f, fixed-noise loss %.4f -> %.4f, SSIM %.4f", frozen_ok, loss_base, loss_cust,
                ssim_base) +
                fmt(" -> %.4f", ssim_cust)};
}

Outcome metric_fixed_points(Shared&) {
    const auto fx = default_feature_extractor(0);
    Rng rng(31);
    const Tensor x = Tensor::uniform({3, 64, 48}, rng, 0.0, 1.0);
    const double s = ssim(x, x), l = lpips(x, x, *fx), c = clip_i(x, x, *fx);
    std::vector<Tensor> set;
    for (int i = 0; i < 40; ++i) set.push_back(Tensor::uniform({3, 64, 48}, rng, 0.0, 1.0));
    const double f_self = fid(set, set, *fx);

    const std::int64_t n = 5000, d = 8;
    const Tensor a = randn({n, d}, 32);
    Tensor b = randn({n, d}, 33);
    const double mu[d] = {1.0, -0.5, 0.5, 0.0, 1.0, 0.0, -1.0, 0.5};
    double mu2 = 0.0;
    for (int k = 0; k < d; ++k) mu2 += mu[k] * mu[k];
    for (std::int64_t i = 0; i < n; ++i)
        for (int k = 0; k < d; ++k) b[i * d + k] += mu[k];
    const double shift = frechet_distance(a, b);
    const bool ok = std::abs(s - 1.0) <= 1e-6 && std::abs(l) <= 1e-7 && std::abs(c - 1.0) <= 1e-6 && f_self < 1e-3 &&
                    std::abs(shift - mu2) <= 0.05 * mu2;
    return {ok, fmt("ssim %.8f, lpips %.1e, clip_i %.8f, ", s, l, c) +
                    fmt("fid(S,S) %.1e, shift fid %.4f vs %.4f", f_self, shift, mu2)};
}

Outcome captions(Shared&) {
    const std::string caption = build_caption({"short sleeve", "round neck", "t-shirts"});
    const PromptPair p = build_prompts(caption);
    const bool ok = caption == "short sleeve round neck t-shirts" &&
                    p.garment_prompt == "a photo of short sleeve round neck t-shirts" &&
                    p.tryon_prompt == "model is wearing short sleeve round neck t-shirts";
    return {ok, "\"" + p.garment_prompt + "\" / \"" + p.tryon_prompt + "\""};
}

Outcome determinism(Shared& sh) {
    const ModelBundle bundle = ModelBundle::create(sh.config);
    SyntheticSpec spec;
    spec.n_samples = 1;
    spec.seed = 3;
    const TrainingSample s = render_dataset(spec)[0];
    const TryonRequest req = request_for(s, 17);
    int garment_calls = 0;
    PipelineHooks hooks;
    hooks.on_garmentnet = [&] { ++garment_calls; };
    const TryonResult a = tryon(req, bundle, sh.sched, hooks);
    const TryonResult b = tryon(req, bundle, sh.sched);

    const fs::path dir = fs::temp_directory_path() / "vtonlab_acceptance";
    fs::create_directories(dir);
    write_png(dir / "a.png", a.image);
    write_png(dir / "b.png", b.image);
    const bool same_png = slurp(dir / "a.png") == slurp(dir / "b.png");
    fs::remove_all(dir);

    std::int64_t unmasked = 0, mismatched = 0;
    const std::int64_t hw = s.mask.numel();
    for (std::int64_t c = 0; c < 3; ++c)
        for (std::int64_t i = 0; i < hw; ++i)
            if (s.mask[i] == 0.0) {
                ++unmasked;
                if (a.image[c * hw + i] != s.person[c * hw + i]) ++mismatched;
            }
    const bool ok = same_png && mismatched == 0 && unmasked > 0 && garment_calls == 1;
    return {ok, fmt("identical png %.0f, unmasked mismatches %.0f of %.0f, GarmentNet calls %.0f", same_png,
                    static_cast<double>(mismatched), static_cast<double>(unmasked), garment_calls)};
}

struct Criterion {
    int id;
    const char* name;
    double limit_seconds;
    std::function<Outcome(Shared&)> run;
};

}  // namespace

int main() {
    Shared shared;
    const std::vector<Criterion> criteria{
        {1, "zero-init equivalence", 5, zero_init},
        {2, "fusion oracle", 5, fusion_oracle},
        {3, "decoupled-attention additivity", 5, additivity},
        {4, "guidance identities", 5, cfg_identities},
        {5, "gradient partition", 60, gradient_partition},
        {6, "overfit sanity", 15 * 60, overfit},
        {7, "end-to-end improvement", 20 * 60, end_to_end},
        {8, "customization contract", 5 * 60, customization},
        {9, "metric fixed points", 60, metric_fixed_points},
        {10, "caption and prompt templates", 1, captions},
        {11, "pipeline determinism and compositing", 30, determinism},
    };
    int failures = 0;
    for (const Criterion& c : criteria) {
        const auto start = Clock::now();
        Outcome o;
        try {
            o = c.run(shared);
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        double elapsed = seconds_since(start);
        // Training time counts towards the end-to-end budget.
        if (c.id == 7) elapsed += shared.train_seconds;
        const bool pass = o.pass && elapsed < c.limit_seconds;
        if (!pass) ++failures;
        std::printf("%s %2d %s: %s (%.1f s, limit %.0f s)\n", pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(),
                    elapsed, c.limit_seconds);
        std::fflush(stdout);
    }
    std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
    return failures == 0 ? 0 : 1;
}
