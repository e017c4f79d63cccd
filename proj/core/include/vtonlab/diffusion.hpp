#pragma once

#include <functional>
#include <string>
#include <vector>

#include "vtonlab/rng.hpp"
#include "vtonlab/tensor.hpp"

namespace vtonlab {

enum class ScheduleKind { linear, scaled_linear };

std::string to_string(ScheduleKind kind);
ScheduleKind parse_schedule_kind(const std::string& s);

// Variance-preserving coefficient tables indexed by timestep 0..T.
// alpha[t]^2 + sigma[t]^2 == 1, alpha[0] == 1, sigma[0] == 0.
struct NoiseSchedule {
    int T = 0;
    ScheduleKind kind = ScheduleKind::scaled_linear;
    std::vector<double> alpha;      // signal coefficient, sqrt(alpha_bar)
    std::vector<double> sigma;      // noise coefficient, sqrt(1 - alpha_bar)
    std::vector<double> beta;       // per-step variance; beta[0] == 0
    std::vector<double> alpha_bar;  // cumulative product of (1 - beta)

    void check_timestep(int t, int lo = 0) const;
};

// Betas span [1e-4, 0.02] rescaled by 1000/T so shorter schedules keep the
// same terminal noise level. scaled_linear interpolates sqrt(beta) linearly.
NoiseSchedule make_schedule(int T, ScheduleKind kind);

// x_t = alpha_t * x0 + sigma_t * eps
Tensor forward_diffuse(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& sched);

using TimestepWeight = std::function<double(int)>;

// w(t) * mean((eps_pred - eps)^2); w defaults to 1.
double denoise_loss(const Tensor& eps_pred, const Tensor& eps, int t, const TimestepWeight& weight = {});

struct GuidanceConfig {
    double scale = 2.0;
    bool enabled = true;

    void validate() const;
};

// s * (cond - uncond) + uncond
Tensor cfg_combine(const Tensor& eps_cond, const Tensor& eps_uncond, double s);

// Posterior variance of the ancestral step t -> t_prev.
double ddpm_posterior_variance(const NoiseSchedule& sched, int t, int t_prev);

// One ancestral DDPM update from t to t_prev (default t-1). No noise is
// injected when t_prev == 0.
Tensor ddpm_step(const Tensor& x_t, const Tensor& eps_pred, int t, const NoiseSchedule& sched, Rng& rng,
                 int t_prev = -1);

// `steps` evenly spaced timesteps in {1..T}, descending, always starting at T.
std::vector<int> sampling_timesteps(int T, int steps);

enum class Branch { conditional, unconditional };

// Noise predictor with conditioning bound in; asked for either branch.
using NoisePredictor = std::function<Tensor(const Tensor& x_t, int t, Branch branch)>;

// Ancestral sampling from pure Gaussian noise of the given shape. With
// guidance disabled the predictor is called once per step (conditional).
Tensor sample(const NoisePredictor& model, const Shape& shape, const NoiseSchedule& sched, int steps,
              const GuidanceConfig& guidance, Rng& rng);

}  // namespace vtonlab
