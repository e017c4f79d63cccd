#pragma once

#include <string>
#include <vector>

#include "vtonlab/conditioning.hpp"
#include "vtonlab/encoders.hpp"
#include "vtonlab/unet.hpp"

namespace vtonlab {

struct BundleConfig {
    std::int64_t image_height = 64;
    std::int64_t image_width = 48;
    int codec_factor = 4;
    UNetConfig unet;  // shared TryonNet/GarmentNet architecture (4-channel source)
    int text_vocab = 256;
    int text_max_tokens = 16;
    int text_heads = 2;
    std::vector<std::int64_t> image_encoder_widths{8, 16, 32};
    int image_prompt_tokens = 4;
    std::uint64_t seed = 0;

    void validate() const;
    std::int64_t latent_height() const { return image_height / codec_factor; }
    std::int64_t latent_width() const { return image_width / codec_factor; }
};

// Every network the try-on model needs, with named parameters:
//   tryonnet.*          13-channel denoiser with decoupled image-prompt branch
//   garmentnet.*        frozen 4-channel sibling, tapped for garment features
//   text_encoder.*      frozen
//   image_encoder.*     frozen
//   image_projection.*  trainable image-prompt projection
class ModelBundle {
public:
    // TryonNet and GarmentNet start from the same 4-channel initialisation;
    // TryonNet's stem is then widened to 13 zero-initialised channels.
    static ModelBundle create(const BundleConfig& config);

    void visit(const nn::ParamVisitor& f);
    void visit(const nn::ConstParamVisitor& f) const;

    nn::Param* find(const std::string& name);
    const nn::Param* find(const std::string& name) const;
    std::vector<std::string> parameter_names() const;
    std::size_t parameter_count() const;  // scalar count

    // Content hash over names, shapes and values.
    std::string hash() const;
    // Content hash restricted to names accepted by the predicate.
    std::string hash_where(const std::function<bool(const std::string&)>& keep) const;

    ImagePromptEmbedder image_prompt_embedder() const { return {&image_encoder, &image_projection}; }
    void zero_grad();

    BundleConfig config;
    UNet tryonnet;
    UNet garmentnet;
    TextEncoder text_encoder;
    ImageEncoder image_encoder;
    ImagePromptProjection image_projection;
    LatentCodec codec{4};
};

// Attention projection layers of a UNet, keyed by dotted name relative to
// the UNet (e.g. "up.0.attn.attn1.to_q").
std::vector<std::pair<std::string, nn::Linear*>> attention_projections(UNet& unet);

// Re-creates a low-rank adapter on the named TryonNet projection.
void attach_adapter(ModelBundle& bundle, const std::string& module, int rank);

// Names of TryonNet projections currently carrying adapters, with ranks.
std::vector<std::pair<std::string, int>> adapter_modules(const ModelBundle& bundle);

}  // namespace vtonlab
