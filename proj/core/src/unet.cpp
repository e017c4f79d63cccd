#include "vtonlab/unet.hpp"

#include <algorithm>
#include <cmath>

#include "vtonlab/errors.hpp"
#include "vtonlab/ops.hpp"

namespace vtonlab {

std::string to_string(FusionSites f) { return f == FusionSites::all ? "all" : "encoder_only"; }

FusionSites parse_fusion_sites(const std::string& s) {
    if (s == "all") return FusionSites::all;
    if (s == "encoder_only") return FusionSites::encoder_only;
    throw InvalidArgument("unknown fusion site set '" + s + "'");
}

void UNetConfig::validate() const {
    if (in_channels != 4 && in_channels != 13)
        throw InvalidArgument("UNet input channels must be 4 or 13, got " + std::to_string(in_channels));
    if (depth < 1) throw InvalidArgument("UNet depth must be >= 1");
    if (base_width < 1 || context_dim < 1 || out_channels < 1) throw InvalidArgument("UNet widths must be positive");
    if (heads < 1 || base_width % heads != 0) throw InvalidArgument("attention heads must divide the base width");
}

std::vector<std::string> UNetConfig::site_ids() const {
    std::vector<std::string> ids;
    for (int l = 0; l < depth; ++l) ids.push_back("down." + std::to_string(l));
    ids.emplace_back("mid");
    for (int l = depth - 1; l >= 0; --l) ids.push_back("up." + std::to_string(l));
    return ids;
}

std::vector<std::string> UNetConfig::fused_site_ids() const {
    auto ids = site_ids();
    if (fusion == FusionSites::encoder_only)
        ids.erase(std::remove_if(ids.begin(), ids.end(), [](const std::string& s) { return s.rfind("up.", 0) == 0; }),
                  ids.end());
    return ids;
}

FeatureTapSet FeatureTapSet::zeros_like() const {
    FeatureTapSet z = *this;
    for (auto& t : z.taps) t.tokens.fill(0.0);
    return z;
}

FeatureTapSet FeatureTapSet::concat_batch(std::span<const FeatureTapSet> parts) {
    if (parts.empty()) throw InvalidArgument("concat of zero tap sets");
    FeatureTapSet out;
    const std::size_t sites = parts.front().size();
    for (std::size_t s = 0; s < sites; ++s) {
        std::vector<Tensor> pieces;
        for (const auto& p : parts) {
            if (p.size() != sites || p.taps[s].site != parts.front().taps[s].site)
                throw GarmentAlignmentError("tap sets disagree on site layout");
            pieces.push_back(p.taps[s].tokens);
        }
        FeatureTap tap = parts.front().taps[s];
        tap.tokens = concat(pieces, 0);
        out.taps.push_back(std::move(tap));
    }
    return out;
}

Tensor expand_input_conv(const Tensor& weights, int target_channels) {
    if (weights.rank() != 4) throw InvalidArgument("conv weights must be (Cout, Cin, k, k)");
    const std::int64_t cout = weights.dim(0), cin = weights.dim(1), kk = weights.dim(2) * weights.dim(3);
    if (target_channels < cin)
        throw InvalidArgument("cannot expand " + std::to_string(cin) + " input channels down to " +
                              std::to_string(target_channels));
    Tensor out({cout, target_channels, weights.dim(2), weights.dim(3)});
    for (std::int64_t o = 0; o < cout; ++o)
        std::copy(weights.data() + o * cin * kk, weights.data() + (o + 1) * cin * kk, out.data() + o * target_channels * kk);
    return out;
}

ResBlock::ResBlock(std::int64_t in, std::int64_t out, std::int64_t time_dim, const nn::Init& init)
    : norm1(in, nn::group_count(in)),
      conv1(in, out, 3, 1, 1, init.child("conv1")),
      time_proj(time_dim, out, true, init.child("time_proj")),
      norm2(out, nn::group_count(out)),
      conv2(out, out, 3, 1, 1, init.child("conv2")) {
    if (in != out) skip.emplace(in, out, 1, 1, 0, init.child("skip"));
}

ag::Var ResBlock::forward(const ag::Var& x, const ag::Var& temb) const {
    ag::Var h = conv1.forward(ag::silu(norm1.forward(x)));
    h = ag::add_channel_vector(h, time_proj.forward(ag::silu(temb)));
    h = conv2.forward(ag::silu(norm2.forward(h)));
    return ag::add(skip ? skip->forward(x) : x, h);
}

void ResBlock::visit(const std::string& prefix, const nn::ParamVisitor& f) {
    norm1.visit(nn::join_name(prefix, "norm1"), f);
    conv1.visit(nn::join_name(prefix, "conv1"), f);
    time_proj.visit(nn::join_name(prefix, "time_proj"), f);
    norm2.visit(nn::join_name(prefix, "norm2"), f);
    conv2.visit(nn::join_name(prefix, "conv2"), f);
    if (skip) skip->visit(nn::join_name(prefix, "skip"), f);
}

void ResBlock::visit(const std::string& prefix, const nn::ConstParamVisitor& f) const {
    norm1.visit(nn::join_name(prefix, "norm1"), f);
    conv1.visit(nn::join_name(prefix, "conv1"), f);
    time_proj.visit(nn::join_name(prefix, "time_proj"), f);
    norm2.visit(nn::join_name(prefix, "norm2"), f);
    conv2.visit(nn::join_name(prefix, "conv2"), f);
    if (skip) skip->visit(nn::join_name(prefix, "skip"), f);
}

TransformerSite::TransformerSite(std::int64_t dim, std::int64_t context_dim, int heads, bool image_branch,
                                 const nn::Init& init)
    : norm1(dim),
      norm2(dim),
      norm3(dim),
      attn1(dim, heads, init.child("attn1")),
      attn2(dim, context_dim, heads, image_branch, init.child("attn2")),
      ff1(dim, 4 * dim, true, init.child("ff1")),
      ff2(4 * dim, dim, true, init.child("ff2")) {}

ag::Var TransformerSite::forward(const ag::Var& x, const ag::Var& text, const ag::Var& image,
                                 const ag::Var& garment, Tensor* captured) const {
    const std::int64_t h = x.shape()[2], w = x.shape()[3];
    ag::Var tokens = ag::to_tokens(x);
    ag::Var n1 = norm1.forward(tokens);
    if (captured) *captured = n1.value();
    tokens = ag::add(tokens, attn1.forward(n1, garment));
    tokens = ag::add(tokens, attn2.forward(norm2.forward(tokens), text, image));
    tokens = ag::add(tokens, ff2.forward(ag::silu(ff1.forward(norm3.forward(tokens)))));
    return ag::from_tokens(tokens, h, w);
}

void TransformerSite::visit(const std::string& prefix, const nn::ParamVisitor& f) {
    norm1.visit(nn::join_name(prefix, "norm1"), f);
    attn1.visit(nn::join_name(prefix, "attn1"), f);
    norm2.visit(nn::join_name(prefix, "norm2"), f);
    attn2.visit(nn::join_name(prefix, "attn2"), f);
    norm3.visit(nn::join_name(prefix, "norm3"), f);
    ff1.visit(nn::join_name(prefix, "ff1"), f);
    ff2.visit(nn::join_name(prefix, "ff2"), f);
}

void TransformerSite::visit(const std::string& prefix, const nn::ConstParamVisitor& f) const {
    norm1.visit(nn::join_name(prefix, "norm1"), f);
    attn1.visit(nn::join_name(prefix, "attn1"), f);
    norm2.visit(nn::join_name(prefix, "norm2"), f);
    attn2.visit(nn::join_name(prefix, "attn2"), f);
    norm3.visit(nn::join_name(prefix, "norm3"), f);
    ff1.visit(nn::join_name(prefix, "ff1"), f);
    ff2.visit(nn::join_name(prefix, "ff2"), f);
}

UNet::UNet(const UNetConfig& config, const nn::Init& init) : config_(config) {
    config_.validate();
    const auto tdim = config_.time_dim();
    const int depth = config_.depth;
    conv_in = nn::Conv2d(config_.in_channels, config_.level_width(0), 3, 1, 1, init.child("conv_in"));
    time_mlp0 = nn::Linear(config_.base_width, tdim, true, init.child("time_mlp0"));
    time_mlp1 = nn::Linear(tdim, tdim, true, init.child("time_mlp1"));

    std::int64_t ch = config_.level_width(0);
    for (int l = 0; l < depth; ++l) {
        const auto w = config_.level_width(l);
        const nn::Init li = init.child("down." + std::to_string(l));
        UNetLevel level;
        level.res = ResBlock(ch, w, tdim, li.child("res"));
        level.attn = TransformerSite(w, config_.context_dim, config_.heads, config_.image_prompt, li.child("attn"));
        if (l + 1 < depth) level.resample.emplace(w, w, 3, 2, 1, li.child("resample"));
        down.push_back(std::move(level));
        ch = w;
    }
    mid_res = ResBlock(ch, ch, tdim, init.child("mid.res"));
    mid_attn = TransformerSite(ch, config_.context_dim, config_.heads, config_.image_prompt, init.child("mid.attn"));

    up.resize(static_cast<std::size_t>(depth));
    for (int l = depth - 1; l >= 0; --l) {
        const auto w = config_.level_width(l);
        const nn::Init li = init.child("up." + std::to_string(l));
        UNetLevel& level = up[static_cast<std::size_t>(l)];
        level.res = ResBlock(ch + w, w, tdim, li.child("res"));
        level.attn = TransformerSite(w, config_.context_dim, config_.heads, config_.image_prompt, li.child("attn"));
        if (l > 0) level.resample.emplace(w, config_.level_width(l - 1), 3, 1, 1, li.child("resample"));
        ch = l > 0 ? config_.level_width(l - 1) : w;
    }
    norm_out = nn::GroupNorm(ch, nn::group_count(ch));
    conv_out = nn::Conv2d(ch, config_.out_channels, 3, 1, 1, init.child("conv_out"));
}

void UNet::check_latent_size(std::int64_t h, std::int64_t w) const {
    const std::int64_t f = std::int64_t{1} << (config_.depth - 1);
    if (h < f || w < f || h % f != 0 || w % f != 0)
        throw InvalidArgument("latent size " + std::to_string(h) + "x" + std::to_string(w) +
                              " is not divisible by " + std::to_string(f) + " for depth " +
                              std::to_string(config_.depth));
}

std::vector<std::pair<std::int64_t, std::int64_t>> UNet::site_resolutions(std::int64_t h, std::int64_t w) const {
    check_latent_size(h, w);
    std::vector<std::pair<std::int64_t, std::int64_t>> res;
    for (int l = 0; l < config_.depth; ++l) res.emplace_back(h >> l, w >> l);
    res.emplace_back(h >> (config_.depth - 1), w >> (config_.depth - 1));
    for (int l = config_.depth - 1; l >= 0; --l) res.emplace_back(h >> l, w >> l);
    return res;
}

ag::Var UNet::forward(const UNetInputs& in) const {
    const Shape& xs = in.x.shape();
    if (xs.size() != 4 || xs[1] != config_.in_channels)
        throw InvalidArgument("UNet expects (N, " + std::to_string(config_.in_channels) + ", H, W) input, got " +
                              shape_str(xs));
    check_latent_size(xs[2], xs[3]);
    const std::int64_t n = xs[0];
    if (static_cast<std::int64_t>(in.timesteps.size()) != n)
        throw InvalidArgument("UNet needs one timestep per batch element");
    if (!in.text.defined() || in.text.shape().size() != 3 || in.text.shape()[0] != n ||
        in.text.shape()[2] != config_.context_dim)
        throw InvalidArgument("UNet text context must be (N, L, " + std::to_string(config_.context_dim) + ")");

    const auto fused = config_.fused_site_ids();
    if (in.garment_taps && in.garment_taps->size() != fused.size())
        throw GarmentAlignmentError("garment tap count " + std::to_string(in.garment_taps->size()) +
                                    " does not match " + std::to_string(fused.size()) + " fused sites");
    if (in.capture) in.capture->taps.clear();

    std::size_t fused_index = 0;
    auto run_site = [&](const TransformerSite& site, const std::string& id, const ag::Var& h) {
        const bool is_fused = fused_index < fused.size() && fused[fused_index] == id;
        ag::Var garment;
        if (is_fused && in.garment_taps) {
            const FeatureTap& tap = in.garment_taps->taps[fused_index];
            if (tap.site != id)
                throw GarmentAlignmentError("garment tap for site '" + tap.site + "' offered at site '" + id + "'");
            garment = ag::Var::constant(tap.tokens);
        }
        Tensor captured;
        ag::Var out = site.forward(h, in.text, in.image_prompt, garment, (is_fused && in.capture) ? &captured : nullptr);
        if (is_fused && in.capture)
            in.capture->taps.push_back(FeatureTap{id, h.shape()[2], h.shape()[3], std::move(captured)});
        if (is_fused) ++fused_index;
        return out;
    };

    ag::Var temb = ag::Var::constant(timestep_features(in.timesteps, config_.base_width));
    temb = time_mlp1.forward(ag::silu(time_mlp0.forward(temb)));

    ag::Var h = conv_in.forward(in.x);
    std::vector<ag::Var> skips;
    for (int l = 0; l < config_.depth; ++l) {
        const UNetLevel& level = down[static_cast<std::size_t>(l)];
        h = level.res.forward(h, temb);
        h = run_site(level.attn, "down." + std::to_string(l), h);
        skips.push_back(h);
        if (level.resample) h = level.resample->forward(h);
    }
    h = mid_res.forward(h, temb);
    h = run_site(mid_attn, "mid", h);
    if (in.stop_after_encoder) return {};

    for (int l = config_.depth - 1; l >= 0; --l) {
        const UNetLevel& level = up[static_cast<std::size_t>(l)];
        h = ag::concat1(h, skips[static_cast<std::size_t>(l)]);
        h = level.res.forward(h, temb);
        h = run_site(level.attn, "up." + std::to_string(l), h);
        if (level.resample) h = level.resample->forward(ag::upsample_nearest2x(h));
    }
    return conv_out.forward(ag::silu(norm_out.forward(h)));
}

void UNet::expand_input_channels(int target) {
    conv_in.weight.mutable_value() = expand_input_conv(conv_in.weight.value(), target);
    config_.in_channels = target;
    config_.validate();
}

void UNet::visit(const std::string& prefix, const nn::ParamVisitor& f) {
    conv_in.visit(nn::join_name(prefix, "conv_in"), f);
    time_mlp0.visit(nn::join_name(prefix, "time_mlp0"), f);
    time_mlp1.visit(nn::join_name(prefix, "time_mlp1"), f);
    for (std::size_t l = 0; l < down.size(); ++l) {
        const std::string p = nn::join_name(prefix, "down." + std::to_string(l));
        down[l].res.visit(p + ".res", f);
        down[l].attn.visit(p + ".attn", f);
        if (down[l].resample) down[l].resample->visit(p + ".resample", f);
    }
    mid_res.visit(nn::join_name(prefix, "mid.res"), f);
    mid_attn.visit(nn::join_name(prefix, "mid.attn"), f);
    for (std::size_t i = up.size(); i-- > 0;) {
        const std::string p = nn::join_name(prefix, "up." + std::to_string(i));
        up[i].res.visit(p + ".res", f);
        up[i].attn.visit(p + ".attn", f);
        if (up[i].resample) up[i].resample->visit(p + ".resample", f);
    }
    norm_out.visit(nn::join_name(prefix, "norm_out"), f);
    conv_out.visit(nn::join_name(prefix, "conv_out"), f);
}

void UNet::visit(const std::string& prefix, const nn::ConstParamVisitor& f) const {
    conv_in.visit(nn::join_name(prefix, "conv_in"), f);
    time_mlp0.visit(nn::join_name(prefix, "time_mlp0"), f);
    time_mlp1.visit(nn::join_name(prefix, "time_mlp1"), f);
    for (std::size_t l = 0; l < down.size(); ++l) {
        const std::string p = nn::join_name(prefix, "down." + std::to_string(l));
        down[l].res.visit(p + ".res", f);
        down[l].attn.visit(p + ".attn", f);
        if (down[l].resample) down[l].resample->visit(p + ".resample", f);
    }
    mid_res.visit(nn::join_name(prefix, "mid.res"), f);
    mid_attn.visit(nn::join_name(prefix, "mid.attn"), f);
    for (std::size_t i = up.size(); i-- > 0;) {
        const std::string p = nn::join_name(prefix, "up." + std::to_string(i));
        up[i].res.visit(p + ".res", f);
        up[i].attn.visit(p + ".attn", f);
        if (up[i].resample) up[i].resample->visit(p + ".resample", f);
    }
    norm_out.visit(nn::join_name(prefix, "norm_out"), f);
    conv_out.visit(nn::join_name(prefix, "conv_out"), f);
}

Tensor timestep_features(std::span<const int> timesteps, std::int64_t dim) {
    const std::int64_t n = static_cast<std::int64_t>(timesteps.size());
    const std::int64_t half = dim / 2;
    Tensor out({n, dim});
    for (std::int64_t b = 0; b < n; ++b)
        for (std::int64_t i = 0; i < half; ++i) {
            const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
            const double arg = static_cast<double>(timesteps[static_cast<std::size_t>(b)]) * freq;
            out[b * dim + i] = std::cos(arg);
            out[b * dim + half + i] = std::sin(arg);
        }
    return out;
}


ag::Var tryonnet_forward(const UNet& tryonnet, const ag::Var& packed, std::span<const int> timesteps,
                         const ag::Var& text, const ag::Var& image_prompt, const FeatureTapSet& garment_taps) {
    if (packed.shape().size() != 4 || packed.shape()[1] != 13)
        throw InvalidArgument("TryonNet expects a 13-channel packed latent, got " + shape_str(packed.shape()));
    UNetInputs in;
    in.x = packed;
    in.timesteps.assign(timesteps.begin(), timesteps.end());
    in.text = text;
    in.image_prompt = image_prompt;
    in.garment_taps = &garment_taps;
    return tryonnet.forward(in);
}

FeatureTapSet garmentnet_forward(const UNet& garmentnet, const Tensor& z_g, const Tensor& prompt) {
    if (z_g.rank() != 4 || z_g.dim(1) != 4)
        throw InvalidArgument("GarmentNet expects a (N, 4, h, w) latent, got " + shape_str(z_g.shape()));
    try {
        garmentnet.check_latent_size(z_g.dim(2), z_g.dim(3));
    } catch (const InvalidArgument& e) {
        throw GarmentAlignmentError(e.what());
    }
    ag::NoGradGuard no_grad;
    FeatureTapSet taps;
    UNetInputs in;
    in.x = ag::Var::constant(z_g);
    in.timesteps.assign(static_cast<std::size_t>(z_g.dim(0)), 0);
    in.text = ag::Var::constant(prompt);
    in.capture = &taps;
    in.stop_after_encoder = garmentnet.config().fusion == FusionSites::encoder_only;
    garmentnet.forward(in);
    return taps;
}

}  // namespace vtonlab
