#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>

#include "vtonlab/diffusion.hpp"
#include "vtonlab/model_bundle.hpp"

namespace vtonlab {

struct TryonRequest {
    Tensor person;   // (3, H, W)
    Tensor garment;  // (3, H, W)
    Tensor mask;     // (1, H, W), 1 marks the region to regenerate
    Tensor pose;     // (3, H, W)
    GarmentAttributes attrs;
    int steps = 30;
    double guidance = 2.0;
    bool guidance_enabled = true;
    std::uint64_t seed = 0;

    // Throws PreprocessingError for missing or misaligned inputs.
    void validate(const BundleConfig& config) const;
};

// Instrumentation points, all optional.
struct PipelineHooks {
    std::function<void()> on_garmentnet;
    std::function<void(int t)> on_step;
};

// Everything that stays fixed across denoising steps of one request.
struct TryonConditioning {
    Tensor mask;          // (1, 1, h, w)
    Tensor z_masked;      // (1, 4, h, w)
    Tensor z_pose;        // (1, 4, h, w)
    Tensor text;          // (1, L, D) try-on prompt
    Tensor null_text;     // (1, L, D)
    Tensor image_prompt;  // (1, n_tokens, D)
    FeatureTapSet garment_taps;
    PromptPair prompts;
};

TryonConditioning prepare_conditioning(const TryonRequest& request, const ModelBundle& bundle,
                                       const PipelineHooks& hooks = {});

// A single branch: conditional uses the prepared conditioning, unconditional
// uses null text, zero image-prompt tokens and zero taps together.
Tensor predict_noise(const ModelBundle& bundle, const Tensor& z_t, int t, const TryonConditioning& cond,
                     Branch branch);

// cfg_combine of both branches, evaluated as one batched forward.
Tensor merged_cfg_predict(const ModelBundle& bundle, const Tensor& z_t, int t, const TryonConditioning& cond,
                          double scale);

struct TryonResult {
    Tensor image;      // composited output, (3, H, W)
    Tensor generated;  // raw decode before compositing
    PromptPair prompts;
};

// m == 0 takes the person pixel exactly, m == 1 the generated one.
Tensor composite(const Tensor& person, const Tensor& generated, const Tensor& mask);

TryonResult tryon(const TryonRequest& request, const ModelBundle& bundle, const NoiseSchedule& sched,
                  const PipelineHooks& hooks = {});

// PNG plus a JSON sidecar {seed, steps, s, checkpoint_hash, caption} with the
// same stem.
void write_tryon_output(const std::filesystem::path& png_path, const TryonResult& result,
                        const TryonRequest& request, const std::string& checkpoint_hash);

}  // namespace vtonlab
