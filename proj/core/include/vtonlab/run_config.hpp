#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "vtonlab/customization.hpp"
#include "vtonlab/diffusion.hpp"
#include "vtonlab/model_bundle.hpp"
#include "vtonlab/training.hpp"

namespace vtonlab {

// Flat key = value run configuration. '#' starts a comment; unknown or
// repeated keys and ill-typed values are rejected with the line number.
struct RunConfig {
    std::int64_t height = 64;
    std::int64_t width = 48;
    int codec_factor = 4;
    int unet_depth = 2;
    int unet_width = 32;
    int unet_heads = 2;
    FusionSites unet_fusion = FusionSites::all;
    int schedule_T = 200;
    ScheduleKind schedule_kind = ScheduleKind::scaled_linear;
    double train_lr = 1e-4;
    int train_batch = 8;
    std::int64_t train_steps = 2000;
    double train_cond_dropout = 0.1;
    std::uint64_t train_seed = 0;
    std::string customize_strategy = "decoder_attention";
    int customize_rank = 4;
    double customize_lr = 1e-4;
    int customize_steps = 100;
    int infer_steps = 30;
    double infer_guidance = 2.0;
    std::uint64_t infer_seed = 0;

    static RunConfig parse(const std::string& text);
    static RunConfig load(const std::filesystem::path& path);
    // Every key, in reference order; parse(serialize()) == *this.
    std::string serialize() const;
    std::string hash() const;
    // Documentation of every key with its type and default.
    static std::string reference();

    BundleConfig bundle_config() const;  // model seed = train.seed
    NoiseSchedule schedule() const;
    TrainConfig train_config() const;
    CustomizationConfig customization_config() const;

    friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

}  // namespace vtonlab
