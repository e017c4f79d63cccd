#include "vtonlab/diffusion.hpp"

#include <cmath>

#include "vtonlab/errors.hpp"

namespace vtonlab {

std::string to_string(ScheduleKind kind) { return kind == ScheduleKind::linear ? "linear" : "scaled_linear"; }

ScheduleKind parse_schedule_kind(const std::string& s) {
    if (s == "linear") return ScheduleKind::linear;
    if (s == "scaled_linear") return ScheduleKind::scaled_linear;
    throw InvalidArgument("unknown schedule kind '" + s + "'");
}

void NoiseSchedule::check_timestep(int t, int lo) const {
    if (t < lo || t > T)
        throw InvalidArgument("timestep " + std::to_string(t) + " outside [" + std::to_string(lo) + ", " +
                              std::to_string(T) + "]");
}

NoiseSchedule make_schedule(int T, ScheduleKind kind) {
    if (T < 1) throw InvalidArgument("schedule needs T >= 1, got " + std::to_string(T));
    constexpr double kBetaStart = 1e-4, kBetaEnd = 0.02, kReferenceT = 1000.0;
    const double stretch = kReferenceT / static_cast<double>(T);
    const double b0 = kBetaStart * stretch, b1 = kBetaEnd * stretch;

    NoiseSchedule s;
    s.T = T;
    s.kind = kind;
    s.beta.assign(static_cast<std::size_t>(T) + 1, 0.0);
    for (int t = 1; t <= T; ++t) {
        const double frac = T == 1 ? 0.0 : static_cast<double>(t - 1) / static_cast<double>(T - 1);
        double b;
        if (kind == ScheduleKind::linear) {
            b = b0 + frac * (b1 - b0);
        } else {
            const double r = std::sqrt(b0) + frac * (std::sqrt(b1) - std::sqrt(b0));
            b = r * r;
        }
        s.beta[static_cast<std::size_t>(t)] = std::min(b, 0.999);
    }
    s.alpha_bar.assign(static_cast<std::size_t>(T) + 1, 1.0);
    for (int t = 1; t <= T; ++t)
        s.alpha_bar[static_cast<std::size_t>(t)] =
            s.alpha_bar[static_cast<std::size_t>(t - 1)] * (1.0 - s.beta[static_cast<std::size_t>(t)]);
    s.alpha.resize(s.alpha_bar.size());
    s.sigma.resize(s.alpha_bar.size());
    for (std::size_t t = 0; t < s.alpha_bar.size(); ++t) {
        s.alpha[t] = std::sqrt(s.alpha_bar[t]);
        s.sigma[t] = std::sqrt(1.0 - s.alpha_bar[t]);
    }
    return s;
}

Tensor forward_diffuse(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& sched) {
    require_same_shape(x0, eps, "forward_diffuse");
    sched.check_timestep(t);
    const double a = sched.alpha[static_cast<std::size_t>(t)], s = sched.sigma[static_cast<std::size_t>(t)];
    Tensor out(x0.shape());
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = a * x0[i] + s * eps[i];
    return out;
}

double denoise_loss(const Tensor& eps_pred, const Tensor& eps, int t, const TimestepWeight& weight) {
    require_same_shape(eps_pred, eps, "denoise_loss");
    if (eps.numel() == 0) throw InvalidArgument("denoise_loss: empty input");
    double s = 0.0;
    for (std::int64_t i = 0; i < eps.numel(); ++i) {
        const double e = eps_pred[i] - eps[i];
        s += e * e;
    }
    const double w = weight ? weight(t) : 1.0;
    return w * s / static_cast<double>(eps.numel());
}

void GuidanceConfig::validate() const {
    if (!(scale >= 1.0)) throw InvalidArgument("guidance scale must be >= 1");
}

Tensor cfg_combine(const Tensor& eps_cond, const Tensor& eps_uncond, double s) {
    require_same_shape(eps_cond, eps_uncond, "cfg_combine");
    if (!(s >= 1.0)) throw InvalidArgument("guidance scale must be >= 1");
    // s(c - u) + u, written to be exact at s == 1 and at c == u.
    Tensor out(eps_cond.shape());
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = eps_cond[i] + (s - 1.0) * (eps_cond[i] - eps_uncond[i]);
    return out;
}

double ddpm_posterior_variance(const NoiseSchedule& sched, int t, int t_prev) {
    const double ab_t = sched.alpha_bar[static_cast<std::size_t>(t)];
    const double ab_p = sched.alpha_bar[static_cast<std::size_t>(t_prev)];
    const double beta_eff = 1.0 - ab_t / ab_p;
    return beta_eff * (1.0 - ab_p) / (1.0 - ab_t);
}

Tensor ddpm_step(const Tensor& x_t, const Tensor& eps_pred, int t, const NoiseSchedule& sched, Rng& rng,
                 int t_prev) {
    require_same_shape(x_t, eps_pred, "ddpm_step");
    sched.check_timestep(t, 1);
    if (t_prev < 0) t_prev = t - 1;
    if (t_prev >= t) throw InvalidArgument("ddpm_step: previous timestep must precede t");

    const double ab_t = sched.alpha_bar[static_cast<std::size_t>(t)];
    const double ab_p = sched.alpha_bar[static_cast<std::size_t>(t_prev)];
    const double beta_eff = 1.0 - ab_t / ab_p;
    const double coef_x0 = std::sqrt(ab_p) * beta_eff / (1.0 - ab_t);
    const double coef_xt = std::sqrt(1.0 - beta_eff) * (1.0 - ab_p) / (1.0 - ab_t);
    const double sa = std::sqrt(ab_t), sb = std::sqrt(1.0 - ab_t);
    const double stddev = t_prev == 0 ? 0.0 : std::sqrt(ddpm_posterior_variance(sched, t, t_prev));

    Tensor out(x_t.shape());
    for (std::int64_t i = 0; i < out.numel(); ++i) {
        const double x0 = (x_t[i] - sb * eps_pred[i]) / sa;
        out[i] = coef_x0 * x0 + coef_xt * x_t[i];
    }
    if (stddev > 0.0)
        for (std::int64_t i = 0; i < out.numel(); ++i) out[i] += stddev * rng.normal();
    return out;
}

std::vector<int> sampling_timesteps(int T, int steps) {
    if (steps < 1) throw InvalidArgument("sampling needs at least one step");
    if (steps > T) throw InvalidArgument("more sampling steps than schedule timesteps");
    std::vector<int> ts;
    ts.reserve(static_cast<std::size_t>(steps));
    for (int k = steps; k >= 1; --k)
        ts.push_back(static_cast<int>((static_cast<std::int64_t>(k) * T) / steps));
    return ts;
}

Tensor sample(const NoisePredictor& model, const Shape& shape, const NoiseSchedule& sched, int steps,
              const GuidanceConfig& guidance, Rng& rng) {
    if (guidance.enabled) guidance.validate();
    const std::vector<int> ts = sampling_timesteps(sched.T, steps);
    Tensor x = Tensor::randn(shape, rng);
    for (std::size_t i = 0; i < ts.size(); ++i) {
        const int t = ts[i];
        const int t_prev = i + 1 < ts.size() ? ts[i + 1] : 0;
        Tensor eps = model(x, t, Branch::conditional);
        if (guidance.enabled) eps = cfg_combine(eps, model(x, t, Branch::unconditional), guidance.scale);
        x = ddpm_step(x, eps, t, sched, rng, t_prev);
        if (!x.all_finite())
            throw SamplingDivergence("non-finite latent after sampling step at t=" + std::to_string(t));
    }
    return x;
}

}  // namespace vtonlab
