#include "vtonlab/customization.hpp"

#include <set>

#include "vtonlab/errors.hpp"

namespace vtonlab {

void CustomizationStrategy::validate() const {
    if (kind == Kind::low_rank && rank < 1) throw InvalidArgument("low-rank customization needs rank >= 1");
}

std::string CustomizationStrategy::name() const {
    switch (kind) {
        case Kind::decoder_attention: return "decoder_attention";
        case Kind::all_unet: return "all_unet";
        case Kind::low_rank: return "low_rank";
    }
    return "unknown";
}

CustomizationStrategy CustomizationStrategy::parse(const std::string& name, int rank) {
    CustomizationStrategy s;
    s.rank = rank;
    if (name == "decoder_attention")
        s.kind = Kind::decoder_attention;
    else if (name == "all_unet")
        s.kind = Kind::all_unet;
    else if (name == "low_rank")
        s.kind = Kind::low_rank;
    else
        throw InvalidArgument("unknown customization strategy '" + name + "'");
    s.validate();
    return s;
}

void CustomizationConfig::validate() const {
    if (!(learning_rate > 0.0)) throw InvalidArgument("customization learning rate must be positive");
    if (steps < 1) throw InvalidArgument("customization needs at least one step");
    if (batch_size < 1) throw InvalidArgument("customization batch size must be positive");
    strategy.validate();
}

CustomizationConfig CustomizationConfig::full_scale() {
    CustomizationConfig c;
    c.learning_rate = 1e-6;
    return c;
}

std::vector<std::string> select_customizable_params(const CustomizationStrategy& strategy, ModelBundle& bundle) {
    strategy.validate();
    std::vector<std::string> out;
    switch (strategy.kind) {
        case CustomizationStrategy::Kind::decoder_attention:
            bundle.tryonnet.visit("tryonnet", [&](const std::string& name, nn::Param&) {
                const bool in_up = name.rfind("tryonnet.up.", 0) == 0;
                const bool attn = name.find(".attn1.") != std::string::npos || name.find(".attn2.") != std::string::npos;
                if (in_up && attn) out.push_back(name);
            });
            break;
        case CustomizationStrategy::Kind::all_unet:
            bundle.tryonnet.visit("tryonnet", [&](const std::string& name, nn::Param&) { out.push_back(name); });
            break;
        case CustomizationStrategy::Kind::low_rank: {
            for (auto& [module, linear] : attention_projections(bundle.tryonnet))
                if (!linear->has_adapter()) attach_adapter(bundle, "tryonnet." + module, strategy.rank);
            bundle.tryonnet.visit("tryonnet", [&](const std::string& name, nn::Param&) {
                if (name.ends_with(".lora_down") || name.ends_with(".lora_up")) out.push_back(name);
            });
            break;
        }
    }
    return out;
}

Tensor extract_garment(const Tensor& person, const Tensor& mask) {
    if (person.rank() != 3 || mask.rank() != 3 || mask.dim(0) != 1 || person.dim(1) != mask.dim(1) ||
        person.dim(2) != mask.dim(2))
        throw InvalidArgument("extract_garment: person " + shape_str(person.shape()) + " and mask " +
                              shape_str(mask.shape()) + " are not aligned");
    if (mask.max_abs() == 0.0) throw EmptyGarmentError("garment mask is empty");
    const std::int64_t c = person.dim(0), hw = person.dim(1) * person.dim(2);
    Tensor out(person.shape());
    for (std::int64_t i = 0; i < hw; ++i) {
        const double m = mask[i];
        if (m < 0.0 || m > 1.0) throw InvalidArgument("mask values must lie in [0, 1]");
        for (std::int64_t ch = 0; ch < c; ++ch) {
            const double x = person[ch * hw + i];
            out[ch * hw + i] = m == 1.0 ? x : (m == 0.0 ? 1.0 : m * x + (1.0 - m));
        }
    }
    return out;
}

CustomizationResult customize(const ModelBundle& bundle, const TrainingSample& pair, const CustomizationConfig& config,
                              const NoiseSchedule& sched) {
    config.validate();
    CustomizationResult result{bundle, {}, {}, bundle.hash()};
    result.modified = select_customizable_params(config.strategy, result.bundle);
    set_trainable_only(result.bundle, {result.modified.begin(), result.modified.end()});

    const PreparedSample prepared = prepare_sample(result.bundle, pair);
    std::vector<const PreparedSample*> members(static_cast<std::size_t>(config.batch_size), &prepared);
    AdamConfig adam_config;
    adam_config.learning_rate = config.learning_rate;
    Adam optimizer(adam_config);
    for (int step = 0; step < config.steps; ++step) {
        Rng rng(derive_seed(config.seed, static_cast<std::uint64_t>(step)));
        const TrainingBatch batch = make_batch(result.bundle, members, AugmentationConfig::none(), 0.0, sched, rng);
        result.losses.push_back(train_step(batch, result.bundle, optimizer, sched, step).loss);
    }
    return result;
}

}  // namespace vtonlab
