#pragma once

#include <string>
#include <vector>

#include "vtonlab/attention.hpp"

namespace vtonlab {

// Which TryonNet self-attention sites receive GarmentNet features.
enum class FusionSites { all, encoder_only };

std::string to_string(FusionSites f);
FusionSites parse_fusion_sites(const std::string& s);

struct UNetConfig {
    int in_channels = 4;
    int out_channels = 4;
    int base_width = 32;
    int depth = 2;  // resolution levels; level l > 0 runs at twice the base width
    int heads = 2;
    int context_dim = 32;
    bool image_prompt = false;  // decoupled image-prompt branch in cross-attention
    FusionSites fusion = FusionSites::all;

    void validate() const;
    std::int64_t level_width(int level) const { return level == 0 ? base_width : 2 * base_width; }
    std::int64_t time_dim() const { return 2 * base_width; }
    // Every transformer site, in forward traversal order: down.*, mid, up.*
    std::vector<std::string> site_ids() const;
    // The subset of site_ids() that takes garment features.
    std::vector<std::string> fused_site_ids() const;
};

// One GarmentNet feature sequence per fused TryonNet self-attention site.
struct FeatureTap {
    std::string site;
    std::int64_t height = 0;
    std::int64_t width = 0;
    Tensor tokens;  // (N, height*width, C)
};

struct FeatureTapSet {
    std::vector<FeatureTap> taps;

    std::size_t size() const { return taps.size(); }
    FeatureTapSet zeros_like() const;
    // Per-sample concatenation along the batch axis.
    static FeatureTapSet concat_batch(std::span<const FeatureTapSet> parts);
};

// Copy the 4-channel input kernel into a wider one whose extra input-channel
// slices are exactly zero.
Tensor expand_input_conv(const Tensor& weights, int target_channels);

class ResBlock {
public:
    ResBlock() = default;
    ResBlock(std::int64_t in, std::int64_t out, std::int64_t time_dim, const nn::Init& init);

    ag::Var forward(const ag::Var& x, const ag::Var& temb) const;
    void visit(const std::string& prefix, const nn::ParamVisitor& f);
    void visit(const std::string& prefix, const nn::ConstParamVisitor& f) const;

    nn::GroupNorm norm1;
    nn::Conv2d conv1;
    nn::Linear time_proj;
    nn::GroupNorm norm2;
    nn::Conv2d conv2;
    std::optional<nn::Conv2d> skip;
};

// Token-space transformer applied at one spatial site.
class TransformerSite {
public:
    TransformerSite() = default;
    TransformerSite(std::int64_t dim, std::int64_t context_dim, int heads, bool image_branch, const nn::Init& init);

    // garment: optional (N, HW, C) tap fused into self-attention.
    // captured: if non-null, receives the normalised self-attention input.
    ag::Var forward(const ag::Var& x, const ag::Var& text, const ag::Var& image, const ag::Var& garment,
                    Tensor* captured) const;
    void visit(const std::string& prefix, const nn::ParamVisitor& f);
    void visit(const std::string& prefix, const nn::ConstParamVisitor& f) const;

    nn::LayerNorm norm1, norm2, norm3;
    SelfAttention attn1;
    DecoupledCrossAttention attn2;
    nn::Linear ff1, ff2;
};

struct UNetLevel {
    ResBlock res;
    TransformerSite attn;
    std::optional<nn::Conv2d> resample;  // stride-2 conv (down) or post-upsample conv (up)
};

struct UNetInputs {
    ag::Var x;                                  // (N, in_channels, H, W)
    std::vector<int> timesteps;                 // one per batch element
    ag::Var text;                               // (N, L_text, context_dim)
    ag::Var image_prompt;                       // (N, L_img, context_dim), optional
    const FeatureTapSet* garment_taps = nullptr;  // fused into self-attention when set
    FeatureTapSet* capture = nullptr;           // collects taps when set
    bool stop_after_encoder = false;            // skip the decoder (capture-only runs)
};

class UNet {
public:
    UNet() = default;
    UNet(const UNetConfig& config, const nn::Init& init);

    const UNetConfig& config() const { return config_; }

    // Returns the (N, out_channels, H, W) noise prediction, or an undefined
    // Var when stop_after_encoder is set.
    ag::Var forward(const UNetInputs& in) const;

    // Widens conv_in to `target` input channels with zero-initialised slices.
    void expand_input_channels(int target);

    void visit(const std::string& prefix, const nn::ParamVisitor& f);
    void visit(const std::string& prefix, const nn::ConstParamVisitor& f) const;

    // Spatial size (H, W) of each site for a latent of the given size.
    std::vector<std::pair<std::int64_t, std::int64_t>> site_resolutions(std::int64_t h, std::int64_t w) const;
    void check_latent_size(std::int64_t h, std::int64_t w) const;

    nn::Conv2d conv_in;
    nn::Linear time_mlp0, time_mlp1;
    std::vector<UNetLevel> down;
    ResBlock mid_res;
    TransformerSite mid_attn;
    std::vector<UNetLevel> up;  // up[l] runs at level l; traversed from depth-1 to 0
    nn::GroupNorm norm_out;
    nn::Conv2d conv_out;

private:
    UNetConfig config_;
};

// Noise prediction of TryonNet on a packed 13-channel batch; every fused
// self-attention site consumes its matching garment tap.
ag::Var tryonnet_forward(const UNet& tryonnet, const ag::Var& packed, std::span<const int> timesteps,
                         const ag::Var& text, const ag::Var& image_prompt, const FeatureTapSet& garment_taps);

// GarmentNet taps for a clean garment latent (N, 4, h, w), run at t = 0
// without recording a graph.
FeatureTapSet garmentnet_forward(const UNet& garmentnet, const Tensor& z_g, const Tensor& prompt);

// Sinusoidal timestep features, (N, dim).
Tensor timestep_features(std::span<const int> timesteps, std::int64_t dim);

}  // namespace vtonlab
