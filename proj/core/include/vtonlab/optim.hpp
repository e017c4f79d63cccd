#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "vtonlab/model_bundle.hpp"

namespace vtonlab {

struct AdamConfig {
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct AdamState {
    std::int64_t step = 0;
    std::map<std::string, Tensor> first_moment;
    std::map<std::string, Tensor> second_moment;
};

// Constant learning rate, no weight decay. Updates only parameters that are
// trainable and currently hold a gradient.
class Adam {
public:
    explicit Adam(AdamConfig config, AdamState state = {});

    void step(ModelBundle& bundle);

    const AdamConfig& config() const { return config_; }
    const AdamState& state() const { return state_; }

private:
    AdamConfig config_;
    AdamState state_;
};

// Everything needed to continue a run exactly where it stopped.
struct TrainingState {
    std::int64_t step = 0;
    AdamState optimizer;
};

}  // namespace vtonlab
