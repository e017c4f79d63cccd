#pragma once

#include <string>

#include "vtonlab/tensor.hpp"

namespace vtonlab {

struct GarmentAttributes {
    std::string sleeve_length;
    std::string neckline;
    std::string item_name;

    // Lowercases and trims every field; throws InvalidArgument if any is empty.
    static GarmentAttributes normalized(std::string sleeve, std::string neck, std::string item);
    void validate() const;
};

struct PromptPair {
    std::string garment_prompt;  // "a photo of " + caption
    std::string tryon_prompt;    // "model is wearing " + caption
    std::string caption;
};

// "{sleeve_length} {neckline} {item_name}"
std::string build_caption(const GarmentAttributes& attrs);
PromptPair build_prompts(const std::string& caption);

// (1 - m) * x_p. Pixels with m == 1 are exactly zero whatever x_p holds there.
Tensor mask_person(const Tensor& person, const Tensor& mask);

// Nearest-neighbour resize of a (1, H, W) mask by an integer factor; keeps
// values binary.
Tensor resize_mask_nearest(const Tensor& mask, std::int64_t height, std::int64_t width);

enum class LatentRole { person_latent, garment_latent, mask, pose_latent, packed, noise };

struct LatentGrid {
    Tensor data;  // (N, C, H, W)
    LatentRole role = LatentRole::person_latent;

    void validate() const;
};

// [z_t (4), m (1), z_m (4), z_pose (4)] along channels. A pixel-resolution mask
// is resized to latent resolution first.
LatentGrid pack_inputs(const LatentGrid& z_t, const LatentGrid& mask, const LatentGrid& z_masked,
                       const LatentGrid& z_pose);

inline constexpr int kLatentChannels = 4;
inline constexpr int kPackedChannels = 13;

// Parameter-free latent codec: factor-f average pooling of RGB plus a
// luminance channel, mapped to [-1, 1]; decoding is nearest-neighbour
// upsampling of the RGB channels.
class LatentCodec {
public:
    explicit LatentCodec(int factor = 4);

    int factor() const { return factor_; }
    Tensor encode(const Tensor& image) const;   // (3,H,W) -> (4,H/f,W/f)
    Tensor decode(const Tensor& latent) const;  // (4,h,w) -> (3,h*f,w*f)
    Tensor encode_batch(std::span<const Tensor> images) const;  // -> (N,4,h,w)

private:
    int factor_;
};

}  // namespace vtonlab
