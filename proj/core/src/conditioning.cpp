#include "vtonlab/conditioning.hpp"

#include <algorithm>
#include <cctype>

#include "vtonlab/errors.hpp"

namespace vtonlab {

namespace {

std::string trim_lower(std::string s) {
    auto not_space = [](unsigned char c) { return !std::isspace(c); };
    s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
    s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

bool is_canonical(const std::string& s) { return !s.empty() && trim_lower(s) == s; }

}  // namespace

GarmentAttributes GarmentAttributes::normalized(std::string sleeve, std::string neck, std::string item) {
    GarmentAttributes a{trim_lower(std::move(sleeve)), trim_lower(std::move(neck)), trim_lower(std::move(item))};
    a.validate();
    return a;
}

void GarmentAttributes::validate() const {
    if (sleeve_length.empty()) throw InvalidArgument("garment attribute 'sleeve_length' is empty");
    if (neckline.empty()) throw InvalidArgument("garment attribute 'neckline' is empty");
    if (item_name.empty()) throw InvalidArgument("garment attribute 'item_name' is empty");
    if (!is_canonical(sleeve_length) || !is_canonical(neckline) || !is_canonical(item_name))
        throw InvalidArgument("garment attributes must be lowercase and trimmed");
}

std::string build_caption(const GarmentAttributes& attrs) {
    attrs.validate();
    return attrs.sleeve_length + " " + attrs.neckline + " " + attrs.item_name;
}

PromptPair build_prompts(const std::string& caption) {
    if (caption.empty()) throw InvalidArgument("caption is empty");
    return PromptPair{"a photo of " + caption, "model is wearing " + caption, caption};
}

Tensor mask_person(const Tensor& person, const Tensor& mask) {
    if (person.rank() != 3 || mask.rank() != 3 || mask.dim(0) != 1 || person.dim(1) != mask.dim(1) ||
        person.dim(2) != mask.dim(2))
        throw InvalidArgument("mask_person: person " + shape_str(person.shape()) + " and mask " +
                              shape_str(mask.shape()) + " are not spatially aligned");
    const std::int64_t c = person.dim(0), hw = person.dim(1) * person.dim(2);
    Tensor out(person.shape());
    for (std::int64_t i = 0; i < hw; ++i) {
        const double m = mask[i];
        if (m < 0.0 || m > 1.0) throw InvalidArgument("mask values must lie in [0, 1]");
        const double keep = 1.0 - m;
        for (std::int64_t ch = 0; ch < c; ++ch) out[ch * hw + i] = keep == 0.0 ? 0.0 : keep * person[ch * hw + i];
    }
    return out;
}

Tensor resize_mask_nearest(const Tensor& mask, std::int64_t height, std::int64_t width) {
    if (mask.rank() != 3 || mask.dim(0) != 1) throw InvalidArgument("mask must be (1, H, W)");
    const std::int64_t h = mask.dim(1), w = mask.dim(2);
    if (height < 1 || width < 1 || h % height != 0 || w % width != 0 || h / height != w / width)
        throw InvalidArgument("mask " + shape_str(mask.shape()) + " cannot be resized by an integer factor to " +
                              std::to_string(height) + "x" + std::to_string(width));
    const std::int64_t f = h / height;
    Tensor out({1, height, width});
    for (std::int64_t y = 0; y < height; ++y)
        for (std::int64_t x = 0; x < width; ++x) out.at(0, y, x) = mask.at(0, y * f + f / 2, x * f + f / 2);
    return out;
}

void LatentGrid::validate() const {
    if (data.rank() != 4) throw InvalidArgument("latent grids are (N, C, H, W), got " + shape_str(data.shape()));
    if (!data.all_finite()) throw InvalidArgument("latent grid holds non-finite values");
    if (role == LatentRole::mask) {
        if (data.dim(1) != 1) throw InvalidArgument("mask grids have one channel");
        for (double v : data.values())
            if (v < 0.0 || v > 1.0) throw InvalidArgument("mask values must lie in [0, 1]");
    }
    if (role == LatentRole::packed && data.dim(1) != kPackedChannels)
        throw InvalidArgument("packed grids have 13 channels");
}

LatentGrid pack_inputs(const LatentGrid& z_t, const LatentGrid& mask, const LatentGrid& z_masked,
                       const LatentGrid& z_pose) {
    for (const LatentGrid* g : {&z_t, &z_masked, &z_pose}) {
        g->validate();
        if (g->data.dim(1) != kLatentChannels)
            throw InvalidArgument("pack_inputs: latents must have 4 channels, got " + shape_str(g->data.shape()));
    }
    LatentGrid m = mask;
    m.role = LatentRole::mask;
    m.validate();
    const std::int64_t n = z_t.data.dim(0), h = z_t.data.dim(2), w = z_t.data.dim(3);
    for (const LatentGrid* g : {&z_masked, &z_pose})
        if (g->data.dim(0) != n || g->data.dim(2) != h || g->data.dim(3) != w)
            throw InvalidArgument("pack_inputs: latent spatial sizes differ: " + shape_str(z_t.data.shape()) + " vs " +
                                  shape_str(g->data.shape()));
    if (m.data.dim(0) != n) throw InvalidArgument("pack_inputs: mask batch size differs");
    if (m.data.dim(2) != h || m.data.dim(3) != w) {
        std::vector<Tensor> resized;
        for (std::int64_t b = 0; b < n; ++b) {
            Tensor one = m.data.slice0(b, b + 1).reshaped({1, m.data.dim(2), m.data.dim(3)});
            resized.push_back(resize_mask_nearest(one, h, w).reshaped({1, 1, h, w}));
        }
        m.data = concat(resized, 0);
    }
    const Tensor parts[] = {z_t.data, m.data, z_masked.data, z_pose.data};
    return LatentGrid{concat(parts, 1), LatentRole::packed};
}

LatentCodec::LatentCodec(int factor) : factor_(factor) {
    if (factor < 1) throw InvalidArgument("codec factor must be >= 1");
}

Tensor LatentCodec::encode(const Tensor& image) const {
    if (image.rank() != 3 || image.dim(0) != 3) throw InvalidArgument("codec encodes (3, H, W) images");
    const std::int64_t h = image.dim(1), w = image.dim(2), f = factor_;
    if (h % f != 0 || w % f != 0)
        throw InvalidArgument("image " + std::to_string(h) + "x" + std::to_string(w) + " not divisible by codec factor " +
                              std::to_string(f));
    const std::int64_t lh = h / f, lw = w / f;
    const double inv = 1.0 / static_cast<double>(f * f);
    Tensor z({kLatentChannels, lh, lw});
    for (std::int64_t y = 0; y < lh; ++y)
        for (std::int64_t x = 0; x < lw; ++x) {
            double rgb[3] = {0.0, 0.0, 0.0};
            for (int c = 0; c < 3; ++c) {
                double s = 0.0;
                for (std::int64_t dy = 0; dy < f; ++dy)
                    for (std::int64_t dx = 0; dx < f; ++dx) s += image.at(c, y * f + dy, x * f + dx);
                rgb[c] = s * inv;
                z.at(c, y, x) = 2.0 * rgb[c] - 1.0;
            }
            z.at(3, y, x) = 2.0 * (0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2]) - 1.0;
        }
    return z;
}

Tensor LatentCodec::decode(const Tensor& latent) const {
    if (latent.rank() != 3 || latent.dim(0) != kLatentChannels) throw InvalidArgument("codec decodes (4, h, w) latents");
    const std::int64_t lh = latent.dim(1), lw = latent.dim(2), f = factor_;
    Tensor img({3, lh * f, lw * f});
    for (int c = 0; c < 3; ++c)
        for (std::int64_t y = 0; y < lh * f; ++y)
            for (std::int64_t x = 0; x < lw * f; ++x) img.at(c, y, x) = (latent.at(c, y / f, x / f) + 1.0) * 0.5;
    return img;
}

Tensor LatentCodec::encode_batch(std::span<const Tensor> images) const {
    std::vector<Tensor> zs;
    zs.reserve(images.size());
    for (const auto& im : images) {
        Tensor z = encode(im);
        zs.push_back(z.reshaped({1, z.dim(0), z.dim(1), z.dim(2)}));
    }
    return concat(zs, 0);
}

}  // namespace vtonlab
