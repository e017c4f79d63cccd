#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "doctest.h"
#include "gradcheck.hpp"
#include "test_util.hpp"
#include "vtonlab/errors.hpp"
#include "vtonlab/synthetic.hpp"
#include "vtonlab/training.hpp"

using namespace vtonlab;
using namespace vtonlab::test;

namespace {

struct Fixture {
    ModelBundle bundle = ModelBundle::create(small_bundle_config());
    NoiseSchedule sched = make_schedule(200, ScheduleKind::scaled_linear);
    std::vector<TrainingSample> data = render_dataset(small_synthetic_spec(4));
    std::vector<PreparedSample> prepared;

    Fixture() {
        apply_partition(bundle, partition_parameters(bundle));
        for (const auto& s : data) prepared.push_back(prepare_sample(bundle, s));
    }

    TrainingBatch batch(std::uint64_t seed, double dropout = 0.0, AugmentationConfig aug = AugmentationConfig::none()) {
        std::vector<const PreparedSample*> members;
        for (const auto& p : prepared) members.push_back(&p);
        Rng rng(seed);
        return make_batch(bundle, members, aug, dropout, sched, rng);
    }
};

bool starts_with(const std::string& s, const std::string& p) { return s.rfind(p, 0) == 0; }

}  // namespace

TEST_CASE("default partition") {
    const ModelBundle bundle = ModelBundle::create(small_bundle_config());
    const ParamPartition p = partition_parameters(bundle);
    CHECK(p.trainable.size() + p.frozen.size() == bundle.parameter_names().size());
    for (const auto& name : p.trainable) {
        CHECK((starts_with(name, "tryonnet.") || starts_with(name, "image_projection.")));
        CHECK(std::find(p.frozen.begin(), p.frozen.end(), name) == p.frozen.end());
    }
    for (const auto& name : p.frozen) {
        const bool frozen_group = starts_with(name, "garmentnet.") || starts_with(name, "text_encoder.") ||
                                  starts_with(name, "image_encoder.");
        CHECK(frozen_group);
    }
    CHECK(p.is_trainable("tryonnet.mid.attn.attn2.to_k_ip.weight"));
    CHECK(p.is_trainable("tryonnet.up.0.attn.attn2.to_v_ip.weight"));
    CHECK_FALSE(p.is_trainable("garmentnet.conv_in.weight"));
}

TEST_CASE("augmentation with zero probability is a no-op") {
    const auto data = render_dataset(small_synthetic_spec(1));
    const auto& s = data[0];
    AugmentableSample a{s.person, s.pose, mask_person(s.person, s.mask), s.mask, s.garment};
    Rng rng(1);
    const AugmentableSample out = augment_sample(a, AugmentationConfig::none(), rng);
    CHECK(out.person == a.person);
    CHECK(out.mask == a.mask);
    CHECK(out.pose == a.pose);
    CHECK(out.masked_person == a.masked_person);
}

TEST_CASE("flip mirrors person and mask together and leaves the garment alone") {
    Tensor person({3, 8, 6}), mask({1, 8, 6}), pose({3, 8, 6});
    person.at(1, 2, 1) = 0.9;
    mask.at(0, 2, 1) = 1.0;
    const Tensor garment = random_image(3, 8, 6, 2);
    AugmentableSample a{person, pose, mask_person(person, mask), mask, garment};
    Rng rng(3);
    const AugmentableSample out = augment_sample(a, {1.0, 0.0, 0.2}, rng);
    CHECK(out.person.at(1, 2, 4) == 0.9);
    CHECK(out.person.at(1, 2, 1) == 0.0);
    CHECK(out.mask.at(0, 2, 4) == 1.0);
    CHECK(out.mask.sum() == 1.0);
    CHECK(out.garment == garment);
}

TEST_CASE("augmentation keeps shapes and mask binarity") {
    const auto data = render_dataset(small_synthetic_spec(3));
    Rng rng(4);
    for (int rep = 0; rep < 20; ++rep) {
        const auto& s = data[static_cast<std::size_t>(rep % 3)];
        AugmentableSample a{s.person, s.pose, mask_person(s.person, s.mask), s.mask, s.garment};
        const AugmentableSample out = augment_sample(a, {0.5, 1.0, 0.2}, rng);
        CHECK(out.person.shape() == s.person.shape());
        CHECK(out.mask.shape() == s.mask.shape());
        for (double v : out.mask.values()) CHECK((v == 0.0 || v == 1.0));
        CHECK(out.garment == s.garment);
    }
}

TEST_CASE("condition dropout") {
    ConditioningBundle cond;
    cond.text = random_tensor({1, 3, 4}, 5);
    cond.image_prompt = random_tensor({1, 2, 4}, 6);
    cond.garment_taps.taps.push_back({"down.0", 2, 2, random_tensor({1, 4, 4}, 7)});
    const Tensor null_text = random_tensor({1, 3, 4}, 8);

    Rng rng(9);
    for (int i = 0; i < 100; ++i) {
        const ConditioningBundle out = drop_conditions(cond, 0.0, rng, null_text);
        CHECK_FALSE(out.dropped);
        CHECK(out.text == cond.text);
    }
    const double p = 0.9;
    const int n = 10000;
    int drops = 0;
    for (int i = 0; i < n; ++i) {
        const ConditioningBundle out = drop_conditions(cond, p, rng, null_text);
        if (out.dropped) {
            ++drops;
            CHECK(out.image_prompt.max_abs() == 0.0);
            CHECK(out.garment_taps.taps[0].tokens.max_abs() == 0.0);
            CHECK(out.text == null_text);
        } else {
            CHECK(out.image_prompt == cond.image_prompt);
            CHECK(out.garment_taps.taps[0].tokens == cond.garment_taps.taps[0].tokens);
        }
    }
    const double rate = static_cast<double>(drops) / n;
    CHECK(std::abs(rate - p) < 3.0 * std::sqrt(p * (1 - p) / n));
    CHECK_THROWS_AS(drop_conditions(cond, 1.0, rng, null_text), InvalidArgument);
    CHECK_THROWS_AS(drop_conditions(cond, -0.1, rng, null_text), InvalidArgument);
}

TEST_CASE("dropped batch rows carry null conditioning") {
    Fixture f;
    const TrainingBatch b = f.batch(10, 0.5);
    const Tensor null_text = null_text_embedding(f.bundle);
    const std::int64_t row = f.bundle.config.text_max_tokens * f.bundle.config.unet.context_dim;
    for (std::int64_t i = 0; i < b.size(); ++i) {
        const Tensor text = b.text.slice0(i, i + 1);
        if (b.dropped[static_cast<std::size_t>(i)]) {
            CHECK(text == null_text);
            for (const auto& tap : b.garment_taps.taps) CHECK(tap.tokens.slice0(i, i + 1).max_abs() == 0.0);
        } else {
            CHECK(text == f.prepared[static_cast<std::size_t>(i)].text);
        }
        CHECK(text.numel() == row);
    }
}

TEST_CASE("one train step respects the partition and replays exactly") {
    Fixture f;
    const TrainingBatch b = f.batch(11, 0.25);
    const auto frozen = [](const std::string& n) { return !starts_with(n, "tryonnet.") && !starts_with(n, "image_projection."); };
    const auto trainable = [&](const std::string& n) { return !frozen(n); };
    const std::string frozen_before = f.bundle.hash_where(frozen);
    const std::string trainable_before = f.bundle.hash_where(trainable);
    Adam adam({});
    const StepResult r = train_step(b, f.bundle, adam, f.sched, 0);
    CHECK(f.bundle.hash_where(frozen) == frozen_before);
    CHECK(f.bundle.hash_where(trainable) != trainable_before);
    CHECK(std::abs(r.loss - denoise_loss(r.eps_pred, b.noise, 0)) < 1e-6);
}

TEST_CASE("frozen networks receive no gradient") {
    Fixture f;
    const TrainingBatch b = f.batch(12, 0.0);
    f.bundle.zero_grad();
    ag::backward(batch_loss(f.bundle, b, f.sched));
    f.bundle.visit([](const std::string& name, const nn::Param& p) {
        if (starts_with(name, "garmentnet.") || starts_with(name, "text_encoder.") || starts_with(name, "image_encoder.")) {
            INFO(name);
            CHECK((!p.has_grad() || p.grad().max_abs() == 0.0));
        }
    });
    bool any_projection = false;
    f.bundle.visit([&](const std::string& name, const nn::Param& p) {
        if (starts_with(name, "image_projection.") && p.has_grad() && p.grad().max_abs() > 0.0) any_projection = true;
    });
    CHECK(any_projection);
}

TEST_CASE("reverse-mode gradients agree with finite differences") {
    Fixture f;
    const TrainingBatch b = f.batch(13, 0.0);
    for (const GradProbe& g : finite_difference_probes(f.bundle, b, f.sched, 14)) {
        INFO(g.name << "[" << g.index << "] analytic " << g.analytic << " numeric " << g.numeric);
        CHECK(g.agrees(1e-2));
        CHECK(g.analytic != 0.0);
    }
}

TEST_CASE("loss is invariant to batch order") {
    Fixture f;
    const TrainingBatch b = f.batch(15, 0.5);
    ag::NoGradGuard g;
    const double base = batch_loss(f.bundle, b, f.sched).value()[0];
    const std::vector<int> order{2, 0, 3, 1};
    CHECK(std::abs(batch_loss(f.bundle, permute_batch(b, order), f.sched).value()[0] - base) < 1e-6);
}

TEST_CASE("batch indices cover each epoch once") {
    std::vector<std::size_t> seen;
    for (std::int64_t step = 0; step < 3; ++step) {
        const auto idx = batch_indices(6, 2, 7, step);
        CHECK(idx.size() == 2);
        seen.insert(seen.end(), idx.begin(), idx.end());
    }
    std::sort(seen.begin(), seen.end());
    CHECK(seen == std::vector<std::size_t>{0, 1, 2, 3, 4, 5});
    CHECK(batch_indices(6, 2, 7, 4) == batch_indices(6, 2, 7, 4));
    CHECK(batch_indices(3, 5, 1, 0).size() == 5);
}

TEST_CASE("train config presets and validation") {
    const TrainConfig d;
    CHECK(d.learning_rate == 1e-4);
    CHECK(d.batch_size == 8);
    CHECK(d.steps == 2000);
    CHECK(d.cond_dropout_prob == 0.1);
    const TrainConfig full = TrainConfig::full_scale();
    CHECK(full.learning_rate == 1e-5);
    CHECK(full.batch_size == 24);
    CHECK(full.epochs == 130);
    CHECK(full.total_steps(48) == 130 * 2);
    TrainConfig bad;
    bad.cond_dropout_prob = 1.0;
    CHECK_THROWS_AS(bad.validate(), InvalidArgument);
}

TEST_CASE("fit is deterministic and logs every step") {
    TempDir dir("fit");
    const auto data = render_dataset(small_synthetic_spec(4));
    TrainConfig cfg;
    cfg.steps = 3;
    cfg.batch_size = 2;
    cfg.seed = 5;
    const NoiseSchedule sched = make_schedule(200, ScheduleKind::scaled_linear);
    ModelBundle a = ModelBundle::create(small_bundle_config());
    ModelBundle b = a;
    FitOptions opts;
    opts.loss_log = dir / "loss.csv";
    const TrainingReport ra = fit(data, a, cfg, sched, opts);
    const TrainingReport rb = fit(data, b, cfg, sched);
    CHECK(ra.losses == rb.losses);
    CHECK(a.hash() == b.hash());
    CHECK(ra.end_step == 3);

    std::ifstream in(dir / "loss.csv");
    std::string line;
    std::getline(in, line);
    CHECK(line == "step,loss,lr,seconds");
    int rows = 0;
    while (std::getline(in, line)) ++rows;
    CHECK(rows == 3);
    CHECK_THROWS_AS(fit({}, a, cfg, sched), InvalidArgument);
}
