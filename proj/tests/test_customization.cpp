#include <set>

#include "doctest.h"
#include "test_util.hpp"
#include "vtonlab/customization.hpp"
#include "vtonlab/errors.hpp"
#include "vtonlab/synthetic.hpp"

using namespace vtonlab;
using namespace vtonlab::test;

namespace {

bool starts_with(const std::string& s, const std::string& p) { return s.rfind(p, 0) == 0; }

TrainingBatch fixed_batch(const ModelBundle& bundle, const TrainingSample& pair, const NoiseSchedule& sched,
                          std::uint64_t seed) {
    const PreparedSample p = prepare_sample(bundle, pair);
    std::vector<const PreparedSample*> members(4, &p);
    Rng rng(seed);
    return make_batch(bundle, members, AugmentationConfig::none(), 0.0, sched, rng);
}

double loss_of(const ModelBundle& bundle, const TrainingBatch& b, const NoiseSchedule& sched) {
    ag::NoGradGuard g;
    return batch_loss(bundle, b, sched).value()[0];
}

}  // namespace

TEST_CASE("strategy parsing") {
    CHECK(CustomizationStrategy::parse("decoder_attention").kind == CustomizationStrategy::Kind::decoder_attention);
    CHECK(CustomizationStrategy::parse("low_rank", 8).rank == 8);
    CHECK(CustomizationStrategy::parse("all_unet").name() == "all_unet");
    CHECK_THROWS_AS(CustomizationStrategy::parse("encoder"), InvalidArgument);
    CHECK_THROWS_AS(CustomizationStrategy::parse("low_rank", 0), InvalidArgument);
    CHECK(CustomizationConfig::full_scale().learning_rate == 1e-6);
}

TEST_CASE("decoder attention set lies in the up blocks") {
    ModelBundle bundle = ModelBundle::create(small_bundle_config());
    const auto names = select_customizable_params(CustomizationStrategy{}, bundle);
    REQUIRE_FALSE(names.empty());
    for (const auto& n : names) {
        CHECK(starts_with(n, "tryonnet.up."));
        CHECK((n.find(".attn1.") != std::string::npos || n.find(".attn2.") != std::string::npos));
    }
    const std::set<std::string> set(names.begin(), names.end());
    CHECK(set.count("tryonnet.up.0.attn.attn2.to_k_ip.weight") == 1);
    CHECK(set.count("tryonnet.up.1.attn.attn1.to_q.weight") == 1);
}

TEST_CASE("all_unet set is every TryonNet parameter") {
    ModelBundle bundle = ModelBundle::create(small_bundle_config());
    const auto names = select_customizable_params(CustomizationStrategy::parse("all_unet"), bundle);
    std::vector<std::string> expected;
    for (const auto& n : bundle.parameter_names())
        if (starts_with(n, "tryonnet.")) expected.push_back(n);
    CHECK(std::set<std::string>(names.begin(), names.end()) == std::set<std::string>(expected.begin(), expected.end()));
}

TEST_CASE("low-rank adapter count and zero-init identity") {
    const ModelBundle base = ModelBundle::create(small_bundle_config());
    ModelBundle adapted = base;
    std::size_t expected = 0;
    for (auto& [name, linear] : attention_projections(adapted.tryonnet))
        expected += static_cast<std::size_t>(4 * (linear->in_features() + linear->out_features()));
    const auto names = select_customizable_params(CustomizationStrategy::parse("low_rank", 4), adapted);
    std::size_t count = 0;
    for (const auto& n : names) count += static_cast<std::size_t>(adapted.find(n)->value().numel());
    CHECK(count == expected);
    CHECK(adapted.parameter_count() == base.parameter_count() + expected);

    const auto data = render_dataset(small_synthetic_spec(1));
    const NoiseSchedule sched = make_schedule(200, ScheduleKind::scaled_linear);
    const TrainingBatch b = fixed_batch(base, data[0], sched, 1);
    CHECK(std::abs(loss_of(adapted, b, sched) - loss_of(base, b, sched)) < 1e-6);
    Tensor pa, pb;
    {
        ag::NoGradGuard g;
        batch_loss(adapted, b, sched, &pa);
        batch_loss(base, b, sched, &pb);
    }
    CHECK(max_abs_diff(pa, pb) < 1e-6);
}

TEST_CASE("extract_garment compositing") {
    const Tensor person = random_image(3, 6, 5, 2);
    CHECK(extract_garment(person, Tensor({1, 6, 5}, 1.0)) == person);

    Tensor one({1, 6, 5});
    one.at(0, 3, 2) = 1.0;
    const Tensor single = extract_garment(person, one);
    for (std::int64_t c = 0; c < 3; ++c)
        for (std::int64_t y = 0; y < 6; ++y)
            for (std::int64_t x = 0; x < 5; ++x)
                CHECK(single.at(c, y, x) == ((y == 3 && x == 2) ? person.at(c, y, x) : 1.0));

    Rng rng(3);
    const Tensor soft = Tensor::uniform({1, 6, 5}, rng, 0.0, 1.0);
    const Tensor out = extract_garment(person, soft);
    for (std::int64_t c = 0; c < 3; ++c)
        for (std::int64_t i = 0; i < 30; ++i) {
            const double m = soft[i];
            CHECK(std::abs(out[c * 30 + i] - (m * person[c * 30 + i] + (1.0 - m))) < 1e-12);
        }
    CHECK_THROWS_AS(extract_garment(person, Tensor({1, 6, 5})), EmptyGarmentError);
}

TEST_CASE("decoder customization freezes the encoder and lowers the pair loss") {
    const ModelBundle base = ModelBundle::create(small_bundle_config());
    const auto data = render_dataset(small_synthetic_spec(1));
    const NoiseSchedule sched = make_schedule(200, ScheduleKind::scaled_linear);
    CustomizationConfig cfg;
    cfg.steps = 20;
    cfg.learning_rate = 1e-3;
    cfg.batch_size = 2;
    const CustomizationResult r = customize(base, data[0], cfg, sched);
    CHECK(r.losses.size() == 20);
    CHECK(r.base_hash == base.hash());

    const auto encoder = [](const std::string& n) {
        return starts_with(n, "tryonnet.down.") || starts_with(n, "tryonnet.mid.") || starts_with(n, "garmentnet.");
    };
    CHECK(r.bundle.hash_where(encoder) == base.hash_where(encoder));
    CHECK(r.bundle.hash() != base.hash());
    const std::set<std::string> modified(r.modified.begin(), r.modified.end());
    r.bundle.visit([&](const std::string& name, const nn::Param& p) {
        if (!modified.count(name)) {
            INFO(name);
            CHECK(p.value() == base.find(name)->value());
        }
    });

    const TrainingBatch probe = fixed_batch(base, data[0], sched, 77);
    CHECK(loss_of(r.bundle, probe, sched) < loss_of(base, probe, sched));
}
