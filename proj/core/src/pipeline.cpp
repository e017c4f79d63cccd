#include "vtonlab/pipeline.hpp"

#include <algorithm>

#include <nlohmann/json.hpp>

#include "vtonlab/errors.hpp"
#include "vtonlab/image.hpp"
#include "vtonlab/ops.hpp"

namespace vtonlab {

namespace {

Tensor with_batch(const Tensor& t) {
    Shape s = t.shape();
    s.insert(s.begin(), 1);
    return t.reshaped(s);
}

void require_image(const Tensor& t, std::int64_t channels, const BundleConfig& config, const char* what) {
    if (t.empty()) throw PreprocessingError(std::string(what) + " is missing");
    if (t.rank() != 3 || t.dim(0) != channels || t.dim(1) != config.image_height || t.dim(2) != config.image_width)
        throw PreprocessingError(std::string(what) + " has shape " + shape_str(t.shape()) + ", expected (" +
                                 std::to_string(channels) + ", " + std::to_string(config.image_height) + ", " +
                                 std::to_string(config.image_width) + ")");
}

Tensor run_tryonnet(const ModelBundle& bundle, const Tensor& z_t, int t, const TryonConditioning& cond, bool with_cond,
                    bool with_null) {
    ag::NoGradGuard no_grad;
    std::vector<Tensor> zt, text, image;
    std::vector<FeatureTapSet> taps;
    const FeatureTapSet zero_taps = cond.garment_taps.zeros_like();
    const Tensor zero_image = Tensor::zeros_like(cond.image_prompt);
    if (with_cond) {
        text.push_back(cond.text);
        image.push_back(cond.image_prompt);
        taps.push_back(cond.garment_taps);
    }
    if (with_null) {
        text.push_back(cond.null_text);
        image.push_back(zero_image);
        taps.push_back(zero_taps);
    }
    const std::size_t n = text.size();
    std::vector<Tensor> packed;
    const Tensor parts[] = {z_t, cond.mask, cond.z_masked, cond.z_pose};
    const Tensor one = concat(parts, 1);
    for (std::size_t i = 0; i < n; ++i) packed.push_back(one);
    const std::vector<int> ts(n, t);
    const FeatureTapSet all_taps = FeatureTapSet::concat_batch(taps);
    return tryonnet_forward(bundle.tryonnet, ag::Var::constant(concat(packed, 0)), ts,
                            ag::Var::constant(concat(text, 0)), ag::Var::constant(concat(image, 0)), all_taps)
        .value();
}

}  // namespace

void TryonRequest::validate(const BundleConfig& config) const {
    require_image(person, 3, config, "person image");
    require_image(garment, 3, config, "garment image");
    require_image(mask, 1, config, "mask");
    require_image(pose, 3, config, "pose map");
    if (steps < 1) throw InvalidArgument("try-on needs at least one sampling step");
    if (guidance_enabled) GuidanceConfig{guidance, true}.validate();
    attrs.validate();
}

TryonConditioning prepare_conditioning(const TryonRequest& request, const ModelBundle& bundle,
                                       const PipelineHooks& hooks) {
    request.validate(bundle.config);
    ag::NoGradGuard no_grad;
    TryonConditioning c;
    c.prompts = build_prompts(build_caption(request.attrs));
    const std::int64_t h = bundle.config.latent_height(), w = bundle.config.latent_width();
    c.mask = resize_mask_nearest(request.mask, h, w).reshaped({1, 1, h, w});
    c.z_masked = with_batch(bundle.codec.encode(mask_person(request.person, request.mask)));
    c.z_pose = with_batch(bundle.codec.encode(request.pose));
    c.text = bundle.text_encoder.encode(c.prompts.tryon_prompt);
    c.null_text = bundle.text_encoder.encode("");
    c.image_prompt = encode_image_prompt(request.garment, bundle.image_prompt_embedder()).data;
    if (hooks.on_garmentnet) hooks.on_garmentnet();
    c.garment_taps = garmentnet_forward(bundle.garmentnet, with_batch(bundle.codec.encode(request.garment)),
                                        bundle.text_encoder.encode(c.prompts.garment_prompt));
    return c;
}

Tensor predict_noise(const ModelBundle& bundle, const Tensor& z_t, int t, const TryonConditioning& cond,
                     Branch branch) {
    const bool conditional = branch == Branch::conditional;
    return run_tryonnet(bundle, z_t, t, cond, conditional, !conditional);
}

Tensor merged_cfg_predict(const ModelBundle& bundle, const Tensor& z_t, int t, const TryonConditioning& cond,
                          double scale) {
    const Tensor both = run_tryonnet(bundle, z_t, t, cond, true, true);
    return cfg_combine(both.slice0(0, 1), both.slice0(1, 2), scale);
}

Tensor composite(const Tensor& person, const Tensor& generated, const Tensor& mask) {
    require_same_shape(person, generated, "composite");
    if (mask.rank() != 3 || mask.dim(0) != 1 || mask.dim(1) != person.dim(1) || mask.dim(2) != person.dim(2))
        throw InvalidArgument("composite mask is not aligned with the image");
    const std::int64_t c = person.dim(0), hw = person.dim(1) * person.dim(2);
    Tensor out(person.shape());
    for (std::int64_t i = 0; i < hw; ++i) {
        const double m = mask[i];
        for (std::int64_t ch = 0; ch < c; ++ch) {
            const std::int64_t k = ch * hw + i;
            out[k] = m == 0.0 ? person[k] : (m == 1.0 ? generated[k] : m * generated[k] + (1.0 - m) * person[k]);
        }
    }
    return out;
}

TryonResult tryon(const TryonRequest& request, const ModelBundle& bundle, const NoiseSchedule& sched,
                  const PipelineHooks& hooks) {
    const TryonConditioning cond = prepare_conditioning(request, bundle, hooks);
    const Shape shape{1, kLatentChannels, bundle.config.latent_height(), bundle.config.latent_width()};
    const GuidanceConfig merged{1.0, false};
    const NoisePredictor predictor = [&](const Tensor& z_t, int t, Branch) {
        if (hooks.on_step) hooks.on_step(t);
        return request.guidance_enabled ? merged_cfg_predict(bundle, z_t, t, cond, request.guidance)
                                        : predict_noise(bundle, z_t, t, cond, Branch::conditional);
    };
    Rng rng(request.seed);
    const Tensor z0 = sample(predictor, shape, sched, request.steps, merged, rng);

    TryonResult result;
    result.prompts = cond.prompts;
    result.generated = bundle.codec.decode(z0.reshaped({shape[1], shape[2], shape[3]}));
    for (double& v : result.generated.values()) v = std::clamp(v, 0.0, 1.0);
    result.image = composite(request.person, result.generated, request.mask);
    return result;
}

void write_tryon_output(const std::filesystem::path& png_path, const TryonResult& result,
                        const TryonRequest& request, const std::string& checkpoint_hash) {
    write_png(png_path, result.image);
    const nlohmann::json sidecar{{"seed", request.seed},
                                 {"steps", request.steps},
                                 {"s", request.guidance_enabled ? request.guidance : 1.0},
                                 {"checkpoint_hash", checkpoint_hash},
                                 {"caption", result.prompts.caption}};
    std::filesystem::path json_path = png_path;
    json_path.replace_extension(".json");
    write_file_atomic(json_path, sidecar.dump(2) + "\n");
}

}  // namespace vtonlab
