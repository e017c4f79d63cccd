#include "vtonlab/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

#include "vtonlab/errors.hpp"
#include "vtonlab/ops.hpp"

namespace vtonlab {

namespace {

constexpr std::uint64_t kEpochStream = 0x45504f4348ULL;

bool starts_with(const std::string& s, const char* prefix) { return s.rfind(prefix, 0) == 0; }

// Nearest-neighbour warp of a (C, H, W) image with zero fill.
Tensor warp(const Tensor& img, bool flip, bool affine, double shift_x, double shift_y, double scale) {
    const std::int64_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
    Tensor out(img.shape());
    const double cy = (static_cast<double>(h) - 1.0) / 2.0;
    const double cx = (static_cast<double>(w) - 1.0) / 2.0;
    for (std::int64_t y = 0; y < h; ++y) {
        for (std::int64_t x = 0; x < w; ++x) {
            double sy = static_cast<double>(y);
            double sx = static_cast<double>(x);
            if (affine) {
                sy = cy + (sy - cy - shift_y * static_cast<double>(h)) / scale;
                sx = cx + (sx - cx - shift_x * static_cast<double>(w)) / scale;
            }
            const auto iy = static_cast<std::int64_t>(std::lround(sy));
            auto ix = static_cast<std::int64_t>(std::lround(sx));
            if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
            if (flip) ix = w - 1 - ix;
            for (std::int64_t ch = 0; ch < c; ++ch) out.at(ch, y, x) = img.at(ch, iy, ix);
        }
    }
    return out;
}

Tensor stack(const std::vector<Tensor>& parts) { return concat(parts, 0); }

Tensor with_batch(const Tensor& t) {
    Shape s = t.shape();
    s.insert(s.begin(), 1);
    return t.reshaped(s);
}

Tensor take_rows(const Tensor& t, std::span<const int> order) {
    std::vector<Tensor> rows;
    for (int i : order) rows.push_back(t.slice0(i, i + 1));
    return concat(rows, 0);
}

void append_loss_log(const std::filesystem::path& path, std::int64_t step, double loss, double lr, double seconds) {
    const bool fresh = !std::filesystem::exists(path);
    std::ofstream out(path, std::ios::app);
    if (!out) throw IoError("cannot append to loss log " + path.string());
    if (fresh) out << "step,loss,lr,seconds\n";
    out.precision(17);
    out << step << ',' << loss << ',' << lr << ',' << seconds << '\n';
}

}  // namespace

bool ParamPartition::is_trainable(const std::string& name) const {
    return std::find(trainable.begin(), trainable.end(), name) != trainable.end();
}

ParamPartition partition_parameters(const ModelBundle& bundle) {
    ParamPartition out;
    bundle.visit([&](const std::string& name, const nn::Param&) {
        if (starts_with(name, "tryonnet.") || starts_with(name, "image_projection."))
            out.trainable.push_back(name);
        else if (starts_with(name, "garmentnet.") || starts_with(name, "text_encoder.") ||
                 starts_with(name, "image_encoder."))
            out.frozen.push_back(name);
        else
            throw ConfigurationError("parameter " + name + " belongs to no known component");
    });
    return out;
}

void apply_partition(ModelBundle& bundle, const ParamPartition& partition) {
    const std::set<std::string> names(partition.trainable.begin(), partition.trainable.end());
    set_trainable_only(bundle, names);
}

void set_trainable_only(ModelBundle& bundle, const std::set<std::string>& names) {
    bundle.visit([&](const std::string& name, nn::Param& p) { p.set_trainable(names.count(name) > 0); });
}

void AugmentationConfig::validate() const {
    if (!(hflip_prob >= 0.0 && hflip_prob <= 1.0) || !(affine_prob >= 0.0 && affine_prob <= 1.0))
        throw InvalidArgument("augmentation probabilities must lie in [0, 1]");
    if (!(affine_limit >= 0.0 && affine_limit < 1.0)) throw InvalidArgument("affine limit must lie in [0, 1)");
}

AugmentableSample augment_sample(const AugmentableSample& sample, const AugmentationConfig& config, Rng& rng) {
    config.validate();
    // Fixed number of draws per sample keeps the stream aligned whatever fires.
    const bool flip = rng.uniform() < config.hflip_prob;
    const bool affine = rng.uniform() < config.affine_prob;
    const double shift_x = rng.uniform(-1.0, 1.0) * config.affine_limit;
    const double shift_y = rng.uniform(-1.0, 1.0) * config.affine_limit;
    const double scale = 1.0 + rng.uniform(-1.0, 1.0) * config.affine_limit;
    if (!flip && !affine) return sample;

    AugmentableSample out;
    out.person = warp(sample.person, flip, affine, shift_x, shift_y, scale);
    out.pose = warp(sample.pose, flip, affine, shift_x, shift_y, scale);
    out.masked_person = warp(sample.masked_person, flip, affine, shift_x, shift_y, scale);
    out.mask = warp(sample.mask, flip, affine, shift_x, shift_y, scale);
    out.garment = sample.garment;
    return out;
}

ConditioningBundle null_conditioning(const ConditioningBundle& cond, const Tensor& null_text) {
    ConditioningBundle out;
    const std::int64_t n = cond.text.dim(0);
    std::vector<Tensor> rows(static_cast<std::size_t>(n), null_text.rank() == 3 ? null_text : with_batch(null_text));
    out.text = concat(rows, 0);
    require_same_shape(out.text, cond.text, "null text");
    out.image_prompt = Tensor::zeros_like(cond.image_prompt);
    out.garment_taps = cond.garment_taps.zeros_like();
    out.dropped = true;
    return out;
}

ConditioningBundle drop_conditions(const ConditioningBundle& cond, double p, Rng& rng, const Tensor& null_text) {
    if (!(p >= 0.0 && p < 1.0)) throw InvalidArgument("condition dropout probability must lie in [0, 1)");
    const bool drop = rng.uniform() < p;
    return drop ? null_conditioning(cond, null_text) : cond;
}

Tensor null_text_embedding(const ModelBundle& bundle) { return bundle.text_encoder.encode(""); }

PreparedSample prepare_sample(const ModelBundle& bundle, const TrainingSample& sample) {
    ag::NoGradGuard no_grad;
    const PromptPair prompts = build_prompts(build_caption(sample.attrs));
    PreparedSample out;
    out.sample = sample;
    out.text = bundle.text_encoder.encode(prompts.tryon_prompt);
    const Tensor z_g = with_batch(bundle.codec.encode(sample.garment));
    out.garment_taps = garmentnet_forward(bundle.garmentnet, z_g, bundle.text_encoder.encode(prompts.garment_prompt));
    out.image_embedding = bundle.image_encoder.encode(sample.garment).embedding;
    return out;
}

TrainingBatch make_batch(const ModelBundle& bundle, std::span<const PreparedSample* const> samples,
                         const AugmentationConfig& augmentation, double cond_dropout, const NoiseSchedule& sched,
                         Rng& rng) {
    if (samples.empty()) throw InvalidArgument("empty batch");
    if (!(cond_dropout >= 0.0 && cond_dropout < 1.0))
        throw InvalidArgument("condition dropout probability must lie in [0, 1)");
    const Tensor null_text = null_text_embedding(bundle);
    const std::int64_t h = bundle.config.latent_height(), w = bundle.config.latent_width();

    TrainingBatch b;
    std::vector<Tensor> z0, mask, z_masked, z_pose, text, emb, noise;
    std::vector<FeatureTapSet> taps;
    for (const PreparedSample* ps : samples) {
        const TrainingSample& s = ps->sample;
        AugmentableSample a{s.person, s.pose, mask_person(s.person, s.mask), s.mask, s.garment};
        a = augment_sample(a, augmentation, rng);
        const bool dropped = rng.uniform() < cond_dropout;
        const int t = rng.uniform_int(1, sched.T);

        b.ids.push_back(s.id);
        z0.push_back(with_batch(bundle.codec.encode(a.person)));
        mask.push_back(resize_mask_nearest(a.mask, h, w).reshaped({1, 1, h, w}));
        z_masked.push_back(with_batch(bundle.codec.encode(a.masked_person)));
        z_pose.push_back(with_batch(bundle.codec.encode(a.pose)));
        text.push_back(dropped ? null_text : ps->text);
        emb.push_back(ps->image_embedding);
        taps.push_back(dropped ? ps->garment_taps.zeros_like() : ps->garment_taps);
        b.dropped.push_back(dropped);
        b.timesteps.push_back(t);
        noise.push_back(Tensor::randn({1, kLatentChannels, h, w}, rng));
    }
    b.z0 = stack(z0);
    b.mask = stack(mask);
    b.z_masked = stack(z_masked);
    b.z_pose = stack(z_pose);
    b.text = stack(text);
    b.image_embedding = stack(emb);
    b.garment_taps = FeatureTapSet::concat_batch(taps);
    b.noise = stack(noise);
    return b;
}

TrainingBatch permute_batch(const TrainingBatch& batch, std::span<const int> order) {
    if (static_cast<std::int64_t>(order.size()) != batch.size()) throw InvalidArgument("permutation size mismatch");
    TrainingBatch out;
    for (int i : order) {
        out.ids.push_back(batch.ids[static_cast<std::size_t>(i)]);
        out.dropped.push_back(batch.dropped[static_cast<std::size_t>(i)]);
        out.timesteps.push_back(batch.timesteps[static_cast<std::size_t>(i)]);
    }
    out.z0 = take_rows(batch.z0, order);
    out.mask = take_rows(batch.mask, order);
    out.z_masked = take_rows(batch.z_masked, order);
    out.z_pose = take_rows(batch.z_pose, order);
    out.text = take_rows(batch.text, order);
    out.image_embedding = take_rows(batch.image_embedding, order);
    out.noise = take_rows(batch.noise, order);
    for (const FeatureTap& tap : batch.garment_taps.taps)
        out.garment_taps.taps.push_back(FeatureTap{tap.site, tap.height, tap.width, take_rows(tap.tokens, order)});
    return out;
}

ag::Var batch_loss(const ModelBundle& bundle, const TrainingBatch& batch, const NoiseSchedule& sched,
                   Tensor* eps_pred) {
    const std::int64_t n = batch.size();
    Tensor z_t(batch.z0.shape());
    const std::int64_t per = batch.z0.numel() / n;
    for (std::int64_t i = 0; i < n; ++i) {
        const int t = batch.timesteps[static_cast<std::size_t>(i)];
        sched.check_timestep(t, 1);
        const double a = sched.alpha[static_cast<std::size_t>(t)], s = sched.sigma[static_cast<std::size_t>(t)];
        for (std::int64_t k = i * per; k < (i + 1) * per; ++k) z_t[k] = a * batch.z0[k] + s * batch.noise[k];
    }
    const Tensor parts[] = {z_t, batch.mask, batch.z_masked, batch.z_pose};
    const ag::Var packed = ag::Var::constant(concat(parts, 1));

    ag::Var image_prompt = bundle.image_projection.forward(ag::Var::constant(batch.image_embedding));
    if (std::find(batch.dropped.begin(), batch.dropped.end(), true) != batch.dropped.end()) {
        Tensor keep(image_prompt.shape(), 1.0);
        const std::int64_t row = keep.numel() / n;
        for (std::int64_t i = 0; i < n; ++i)
            if (batch.dropped[static_cast<std::size_t>(i)])
                std::fill(keep.data() + i * row, keep.data() + (i + 1) * row, 0.0);
        image_prompt = ag::mul(image_prompt, ag::Var::constant(std::move(keep)));
    }

    const ag::Var pred = tryonnet_forward(bundle.tryonnet, packed, batch.timesteps, ag::Var::constant(batch.text),
                                          image_prompt, batch.garment_taps);
    if (eps_pred) *eps_pred = pred.value();
    return ag::mse_loss(pred, ag::Var::constant(batch.noise));
}

StepResult train_step(const TrainingBatch& batch, ModelBundle& bundle, Adam& optimizer, const NoiseSchedule& sched,
                      std::int64_t step_index) {
    bundle.zero_grad();
    StepResult result;
    const ag::Var loss = batch_loss(bundle, batch, sched, &result.eps_pred);
    result.loss = loss.value()[0];
    if (!std::isfinite(result.loss)) {
        std::ostringstream msg;
        msg << "non-finite loss at step " << step_index << " (samples:";
        for (const auto& id : batch.ids) msg << ' ' << id;
        msg << ")";
        throw TrainingDivergence(msg.str());
    }
    ag::backward(loss);
    bundle.visit([&](const std::string& name, const nn::Param& p) {
        if (p.trainable() && p.has_grad() && !p.grad().all_finite())
            throw TrainingDivergence("non-finite gradient for " + name + " at step " + std::to_string(step_index));
    });
    optimizer.step(bundle);
    bundle.zero_grad();
    return result;
}

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0)) throw InvalidArgument("learning rate must be positive");
    if (batch_size < 1) throw InvalidArgument("batch size must be positive");
    if (steps < 0 || epochs < 0 || (steps == 0 && epochs == 0))
        throw InvalidArgument("training needs a positive step or epoch count");
    if (!(cond_dropout_prob >= 0.0 && cond_dropout_prob < 1.0))
        throw InvalidArgument("condition dropout probability must lie in [0, 1)");
    augmentation.validate();
}

std::int64_t TrainConfig::total_steps(std::size_t dataset_size) const {
    if (steps > 0) return steps;
    const auto n = static_cast<std::int64_t>(dataset_size);
    return (static_cast<std::int64_t>(epochs) * n + batch_size - 1) / batch_size;
}

TrainConfig TrainConfig::full_scale() {
    TrainConfig c;
    c.learning_rate = 1e-5;
    c.batch_size = 24;
    c.epochs = 130;
    c.steps = 0;
    return c;
}

std::vector<std::size_t> batch_indices(std::size_t dataset_size, int batch_size, std::uint64_t seed,
                                       std::int64_t step) {
    if (dataset_size == 0) throw InvalidArgument("empty dataset");
    const auto n = static_cast<std::uint64_t>(dataset_size);
    std::vector<std::size_t> out;
    std::int64_t cached_epoch = -1;
    std::vector<std::size_t> perm(dataset_size);
    for (int j = 0; j < batch_size; ++j) {
        const std::uint64_t pos = static_cast<std::uint64_t>(step) * static_cast<std::uint64_t>(batch_size) +
                                  static_cast<std::uint64_t>(j);
        const auto epoch = static_cast<std::int64_t>(pos / n);
        if (epoch != cached_epoch) {
            for (std::size_t i = 0; i < dataset_size; ++i) perm[i] = i;
            Rng rng(derive_seed(derive_seed(seed, kEpochStream), static_cast<std::uint64_t>(epoch)));
            for (std::size_t i = dataset_size; i > 1; --i) {
                const auto k = static_cast<std::size_t>(rng.next_u64() % i);
                std::swap(perm[i - 1], perm[k]);
            }
            cached_epoch = epoch;
        }
        out.push_back(perm[pos % n]);
    }
    return out;
}

TrainingReport fit(std::span<const TrainingSample> dataset, ModelBundle& bundle, const TrainConfig& config,
                   const NoiseSchedule& sched, const FitOptions& options) {
    if (dataset.empty()) throw InvalidArgument("fit needs a non-empty dataset");
    config.validate();
    apply_partition(bundle, partition_parameters(bundle));

    std::vector<PreparedSample> prepared;
    prepared.reserve(dataset.size());
    for (const TrainingSample& s : dataset) prepared.push_back(prepare_sample(bundle, s));

    AdamConfig adam_config;
    adam_config.learning_rate = config.learning_rate;
    TrainingReport report;
    report.first_step = options.resume ? options.resume->step : 0;
    Adam optimizer(adam_config, options.resume ? options.resume->optimizer : AdamState{});

    const std::int64_t total = config.total_steps(dataset.size());
    const auto start = std::chrono::steady_clock::now();
    std::int64_t step = report.first_step;
    for (; step < total; ++step) {
        const auto idx = batch_indices(dataset.size(), config.batch_size, config.seed, step);
        std::vector<const PreparedSample*> members;
        for (std::size_t i : idx) members.push_back(&prepared[i]);
        Rng rng(derive_seed(config.seed, static_cast<std::uint64_t>(step)));
        const TrainingBatch batch =
            make_batch(bundle, members, config.augmentation, config.cond_dropout_prob, sched, rng);
        const StepResult r = train_step(batch, bundle, optimizer, sched, step);
        report.losses.push_back(r.loss);

        const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (!options.loss_log.empty()) append_loss_log(options.loss_log, step, r.loss, config.learning_rate, seconds);
        if (options.on_step) options.on_step(step, r.loss);
        if (options.checkpoint_every > 0 && !options.checkpoint_dir.empty() &&
            (step + 1) % options.checkpoint_every == 0) {
            std::filesystem::create_directories(options.checkpoint_dir);
            const TrainingState state{step + 1, optimizer.state()};
            const auto path = options.checkpoint_dir / ("step_" + std::to_string(step + 1) + ".ckpt");
            save_checkpoint(path, bundle, sched, &state);
            report.checkpoints.push_back(path);
        }
    }
    report.end_step = step;
    report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    report.state = TrainingState{step, optimizer.state()};
    return report;
}

}  // namespace vtonlab
