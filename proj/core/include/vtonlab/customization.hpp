#pragma once

#include <string>
#include <vector>

#include "vtonlab/training.hpp"

namespace vtonlab {

struct CustomizationStrategy {
    enum class Kind { decoder_attention, all_unet, low_rank };
    Kind kind = Kind::decoder_attention;
    int rank = 4;  // low_rank only

    void validate() const;
    std::string name() const;
    static CustomizationStrategy parse(const std::string& name, int rank = 4);
};

struct CustomizationConfig {
    double learning_rate = 1e-4;
    int steps = 100;
    int batch_size = 4;  // copies of the single pair per step
    CustomizationStrategy strategy;
    std::uint64_t seed = 0;

    void validate() const;
    static CustomizationConfig full_scale();  // lr 1e-6
};

// Full bundle names (prefixed "tryonnet.") of the parameters a strategy
// updates. For low_rank this attaches fresh adapters to every TryonNet
// attention projection and returns the adapter parameters.
std::vector<std::string> select_customizable_params(const CustomizationStrategy& strategy, ModelBundle& bundle);

// Garment pixels kept, everything else white. Throws EmptyGarmentError for an
// empty mask.
Tensor extract_garment(const Tensor& person, const Tensor& mask);

struct CustomizationResult {
    ModelBundle bundle;
    std::vector<std::string> modified;
    std::vector<double> losses;
    std::string base_hash;
};

// Fine-tunes a copy of `bundle` on one pair. No condition dropout and no
// augmentation; every step draws fresh timesteps and noise.
CustomizationResult customize(const ModelBundle& bundle, const TrainingSample& pair, const CustomizationConfig& config,
                              const NoiseSchedule& sched);

}  // namespace vtonlab
