#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "vtonlab/errors.hpp"
#include "vtonlab/model_bundle.hpp"
#include "vtonlab/training.hpp"

namespace vtonlab::test {

struct GradProbe {
    std::string name;
    std::int64_t index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    bool agrees(double rel_tol) const {
        const double scale = std::max(std::abs(analytic), std::abs(numeric));
        return std::abs(analytic - numeric) <= rel_tol * scale + 1e-9;
    }
};

// Scalar parameters sampled for finite-difference checks: stem, attention,
// image-prompt K/V and the image-prompt projection.
inline std::vector<std::string> gradient_probe_names() {
    return {"tryonnet.conv_in.weight",
            "tryonnet.down.0.attn.attn1.to_q.weight",
            "tryonnet.mid.attn.attn1.to_v.weight",
            "tryonnet.up.0.attn.attn2.to_k.weight",
            "tryonnet.down.1.attn.attn2.to_k_ip.weight",
            "tryonnet.up.1.attn.attn2.to_v_ip.weight",
            "tryonnet.conv_out.bias",
            "image_projection.proj.weight"};
}

// Central differences of batch_loss against its reverse-mode gradient.
inline std::vector<GradProbe> finite_difference_probes(ModelBundle& bundle, const TrainingBatch& batch,
                                                       const NoiseSchedule& sched, std::uint64_t seed,
                                                       double h = 1e-5) {
    bundle.zero_grad();
    const ag::Var loss = batch_loss(bundle, batch, sched);
    ag::backward(loss);
    Rng rng(seed);
    std::vector<GradProbe> probes;
    for (const std::string& name : gradient_probe_names()) {
        nn::Param* p = bundle.find(name);
        if (!p) throw InvalidArgument("no parameter named " + name);
        GradProbe g;
        g.name = name;
        const std::int64_t n = p->value().numel();
        // The stem probe lands in one of the zero-initialised conditioning channels.
        if (name == "tryonnet.conv_in.weight") {
            const std::int64_t k = p->value().dim(2) * p->value().dim(3);
            g.index = (rng.uniform_int(0, static_cast<int>(p->value().dim(0)) - 1) * 13 + 5) * k + 4;
        } else {
            g.index = rng.uniform_int(0, static_cast<int>(n - 1));
        }
        g.analytic = p->has_grad() ? p->grad()[g.index] : 0.0;
        probes.push_back(g);
    }
    bundle.zero_grad();
    ag::NoGradGuard no_grad;
    for (GradProbe& g : probes) {
        Tensor& v = bundle.find(g.name)->mutable_value();
        const double orig = v[g.index];
        v[g.index] = orig + h;
        const double up = batch_loss(bundle, batch, sched).value()[0];
        v[g.index] = orig - h;
        const double down = batch_loss(bundle, batch, sched).value()[0];
        v[g.index] = orig;
        g.numeric = (up - down) / (2.0 * h);
    }
    return probes;
}

}  // namespace vtonlab::test
