#include "vtonlab/optim.hpp"

#include <cmath>

namespace vtonlab {

Adam::Adam(AdamConfig config, AdamState state) : config_(config), state_(std::move(state)) {}

void Adam::step(ModelBundle& bundle) {
    ++state_.step;
    const double b1 = config_.beta1;
    const double b2 = config_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(state_.step));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(state_.step));
    bundle.visit([&](const std::string& name, nn::Param& p) {
        if (!p.trainable() || !p.has_grad()) return;
        Tensor& value = p.mutable_value();
        const Tensor& g = p.grad();
        auto [mit, m_new] = state_.first_moment.try_emplace(name, Tensor(value.shape()));
        auto [vit, v_new] = state_.second_moment.try_emplace(name, Tensor(value.shape()));
        Tensor& m = mit->second;
        Tensor& v = vit->second;
        for (std::int64_t i = 0; i < value.numel(); ++i) {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            const double mh = m[i] / c1;
            const double vh = v[i] / c2;
            value[i] -= config_.learning_rate * mh / (std::sqrt(vh) + config_.epsilon);
        }
    });
}

}  // namespace vtonlab
