#include "vtonlab/model_bundle.hpp"

#include <sstream>

#include "vtonlab/errors.hpp"
#include "vtonlab/hash.hpp"

namespace vtonlab {

void BundleConfig::validate() const {
    if (codec_factor < 1) throw InvalidArgument("codec factor must be >= 1");
    if (image_height < 1 || image_width < 1 || image_height % codec_factor != 0 || image_width % codec_factor != 0)
        throw InvalidArgument("resolution " + std::to_string(image_height) + "x" + std::to_string(image_width) +
                              " is not divisible by the codec factor " + std::to_string(codec_factor));
    unet.validate();
    const std::int64_t f = std::int64_t{1} << (unet.depth - 1);
    if (latent_height() % f != 0 || latent_width() % f != 0)
        throw InvalidArgument("latent size is not divisible by 2^(depth-1)");
    if (image_encoder_widths.empty()) throw InvalidArgument("image encoder needs at least one stage");
    if (image_prompt_tokens < 1) throw InvalidArgument("image prompt needs at least one token");
}

ModelBundle ModelBundle::create(const BundleConfig& config) {
    config.validate();
    ModelBundle b;
    b.config = config;
    const nn::Init root(config.seed, "");

    UNetConfig base = config.unet;
    base.in_channels = kLatentChannels;
    base.out_channels = kLatentChannels;
    base.image_prompt = true;
    b.tryonnet = UNet(base, root.child("unet"));
    b.tryonnet.expand_input_channels(kPackedChannels);

    UNetConfig garment = base;
    garment.image_prompt = false;
    b.garmentnet = UNet(garment, root.child("unet"));

    b.text_encoder = TextEncoder(config.text_vocab, config.text_max_tokens, config.unet.context_dim, config.text_heads,
                                 root.child("text_encoder"));
    b.image_encoder = ImageEncoder(config.image_encoder_widths, root.child("image_encoder"));
    b.image_projection = ImagePromptProjection(b.image_encoder.embed_dim(), config.image_prompt_tokens,
                                               config.unet.context_dim, root.child("image_projection"));
    b.codec = LatentCodec(config.codec_factor);

    // Default partition: only TryonNet and the image-prompt projection learn.
    b.visit([](const std::string& name, nn::Param& p) {
        p.set_trainable(name.rfind("tryonnet.", 0) == 0 || name.rfind("image_projection.", 0) == 0);
    });
    return b;
}

void ModelBundle::visit(const nn::ParamVisitor& f) {
    tryonnet.visit("tryonnet", f);
    garmentnet.visit("garmentnet", f);
    text_encoder.visit("text_encoder", f);
    image_encoder.visit("image_encoder", f);
    image_projection.visit("image_projection", f);
}

void ModelBundle::visit(const nn::ConstParamVisitor& f) const {
    tryonnet.visit("tryonnet", f);
    garmentnet.visit("garmentnet", f);
    text_encoder.visit("text_encoder", f);
    image_encoder.visit("image_encoder", f);
    image_projection.visit("image_projection", f);
}

nn::Param* ModelBundle::find(const std::string& name) {
    nn::Param* found = nullptr;
    visit([&](const std::string& n, nn::Param& p) {
        if (n == name) found = &p;
    });
    return found;
}

const nn::Param* ModelBundle::find(const std::string& name) const {
    const nn::Param* found = nullptr;
    visit([&](const std::string& n, const nn::Param& p) {
        if (n == name) found = &p;
    });
    return found;
}

std::vector<std::string> ModelBundle::parameter_names() const {
    std::vector<std::string> names;
    visit([&](const std::string& n, const nn::Param&) { names.push_back(n); });
    return names;
}

std::size_t ModelBundle::parameter_count() const {
    std::size_t count = 0;
    visit([&](const std::string&, const nn::Param& p) { count += static_cast<std::size_t>(p.value().numel()); });
    return count;
}

std::string ModelBundle::hash() const {
    return hash_where([](const std::string&) { return true; });
}

std::string ModelBundle::hash_where(const std::function<bool(const std::string&)>& keep) const {
    std::uint64_t h = fnv1a64(std::string_view{});
    visit([&](const std::string& n, const nn::Param& p) {
        if (!keep(n)) return;
        h = fnv1a64(n, h);
        h = fnv1a64(shape_str(p.value().shape()), h);
        h = fnv1a64(p.value().values(), h);
    });
    return hex64(h);
}

void ModelBundle::zero_grad() {
    visit([](const std::string&, nn::Param& p) { p.zero_grad(); });
}

namespace {

void collect_site(TransformerSite& site, const std::string& prefix,
                  std::vector<std::pair<std::string, nn::Linear*>>& out) {
    out.emplace_back(prefix + ".attn1.to_q", &site.attn1.to_q);
    out.emplace_back(prefix + ".attn1.to_k", &site.attn1.to_k);
    out.emplace_back(prefix + ".attn1.to_v", &site.attn1.to_v);
    out.emplace_back(prefix + ".attn1.to_out", &site.attn1.to_out);
    out.emplace_back(prefix + ".attn2.to_q", &site.attn2.to_q);
    out.emplace_back(prefix + ".attn2.to_k", &site.attn2.to_k);
    out.emplace_back(prefix + ".attn2.to_v", &site.attn2.to_v);
    if (site.attn2.to_k_ip) out.emplace_back(prefix + ".attn2.to_k_ip", &*site.attn2.to_k_ip);
    if (site.attn2.to_v_ip) out.emplace_back(prefix + ".attn2.to_v_ip", &*site.attn2.to_v_ip);
    out.emplace_back(prefix + ".attn2.to_out", &site.attn2.to_out);
}

}  // namespace

std::vector<std::pair<std::string, nn::Linear*>> attention_projections(UNet& unet) {
    std::vector<std::pair<std::string, nn::Linear*>> out;
    for (std::size_t l = 0; l < unet.down.size(); ++l) collect_site(unet.down[l].attn, "down." + std::to_string(l) + ".attn", out);
    collect_site(unet.mid_attn, "mid.attn", out);
    for (std::size_t l = unet.up.size(); l-- > 0;) collect_site(unet.up[l].attn, "up." + std::to_string(l) + ".attn", out);
    return out;
}

void attach_adapter(ModelBundle& bundle, const std::string& module, int rank) {
    const std::string prefix = "tryonnet.";
    if (module.rfind(prefix, 0) != 0) throw InvalidArgument("adapters attach only to TryonNet projections: " + module);
    const std::string rel = module.substr(prefix.size());
    for (auto& [name, linear] : attention_projections(bundle.tryonnet)) {
        if (name == rel) {
            linear->attach_low_rank(rank, nn::Init(bundle.config.seed, "adapter." + module));
            return;
        }
    }
    throw InvalidArgument("no attention projection named " + module);
}

std::vector<std::pair<std::string, int>> adapter_modules(const ModelBundle& bundle) {
    std::vector<std::pair<std::string, int>> out;
    auto& unet = const_cast<UNet&>(bundle.tryonnet);
    for (auto& [name, linear] : attention_projections(unet))
        if (linear->has_adapter()) out.emplace_back("tryonnet." + name, linear->adapter()->rank);
    return out;
}

}  // namespace vtonlab
