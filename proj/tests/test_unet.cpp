#include "doctest.h"
#include "test_util.hpp"
#include "vtonlab/errors.hpp"
#include "vtonlab/ops.hpp"
#include "vtonlab/unet.hpp"

using namespace vtonlab;
using vtonlab::test::random_tensor;

namespace {

UNetConfig small_config(bool image_prompt = true) {
    UNetConfig c;
    c.base_width = 16;
    c.heads = 2;
    c.context_dim = 8;
    c.image_prompt = image_prompt;
    return c;
}

struct Inputs {
    Tensor x;
    std::vector<int> t;
    Tensor text;
    Tensor image;
};

Inputs make_inputs(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w, std::uint64_t seed) {
    Rng rng(seed);
    Inputs in;
    in.x = Tensor::randn({n, c, h, w}, rng);
    for (std::int64_t i = 0; i < n; ++i) in.t.push_back(rng.uniform_int(1, 200));
    in.text = Tensor::randn({n, 5, 8}, rng);
    in.image = Tensor::randn({n, 4, 8}, rng);
    return in;
}

Tensor run(const UNet& net, const Tensor& x, const Inputs& in, const FeatureTapSet* taps = nullptr) {
    ag::NoGradGuard g;
    UNetInputs u;
    u.x = ag::Var::constant(x);
    u.timesteps = in.t;
    u.text = ag::Var::constant(in.text);
    u.image_prompt = ag::Var::constant(in.image);
    u.garment_taps = taps;
    return net.forward(u).value();
}

}  // namespace

TEST_CASE("site ids and fusion subsets") {
    UNetConfig c = small_config();
    CHECK(c.site_ids() == std::vector<std::string>{"down.0", "down.1", "mid", "up.1", "up.0"});
    CHECK(c.fused_site_ids() == c.site_ids());
    c.fusion = FusionSites::encoder_only;
    CHECK(c.fused_site_ids() == std::vector<std::string>{"down.0", "down.1", "mid"});
    CHECK(parse_fusion_sites("encoder_only") == FusionSites::encoder_only);
    CHECK_THROWS_AS(parse_fusion_sites("decoder"), InvalidArgument);
}

TEST_CASE("expanded input slices are zero") {
    const Tensor w = random_tensor({6, 4, 3, 3}, 1);
    const Tensor e = expand_input_conv(w, 13);
    REQUIRE(e.shape() == Shape{6, 13, 3, 3});
    for (std::int64_t o = 0; o < 6; ++o)
        for (std::int64_t c = 0; c < 13; ++c)
            for (std::int64_t k = 0; k < 9; ++k) {
                const double v = e[(o * 13 + c) * 9 + k];
                if (c < 4)
                    CHECK(v == w[(o * 4 + c) * 9 + k]);
                else
                    CHECK(v == 0.0);
            }
    CHECK_THROWS_AS(expand_input_conv(w, 3), InvalidArgument);
}

TEST_CASE("expanded convolution ignores the new channels") {
    const Tensor w = random_tensor({6, 4, 3, 3}, 2);
    Tensor e = expand_input_conv(w, 13);
    const Tensor x = random_tensor({2, 13, 5, 4}, 3);
    ag::NoGradGuard g;
    const Tensor full = ag::conv2d(ag::Var::constant(x), ag::Var::constant(e), {}, 1, 1).value();
    const Tensor base = ag::conv2d(ag::Var::constant(x.channels(0, 4)), ag::Var::constant(w), {}, 1, 1).value();
    CHECK(max_abs_diff(full, base) < 1e-12);
    for (std::int64_t o = 0; o < 6; ++o)
        for (std::int64_t c = 0; c < 4; ++c)
            for (std::int64_t k = 0; k < 9; ++k) e[(o * 13 + c) * 9 + k] = 0.0;
    CHECK(ag::conv2d(ag::Var::constant(x), ag::Var::constant(e), {}, 1, 1).value().max_abs() == 0.0);
}

TEST_CASE("13-channel UNet equals its 4-channel source") {
    const UNet source(small_config(), nn::Init(5, "unet"));
    UNet wide = source;
    wide.expand_input_channels(13);
    CHECK(wide.config().in_channels == 13);
    for (std::uint64_t s = 0; s < 3; ++s) {
        const Inputs in = make_inputs(2, 13, 8, 8, 100 + s);
        const Tensor a = run(wide, in.x, in);
        const Tensor b = run(source, in.x.channels(0, 4), in);
        CHECK(max_abs_diff(a, b) < 1e-6);
    }
}

TEST_CASE("output spatial size equals input size") {
    const UNet net(small_config(), nn::Init(6, "unet"));
    for (auto [h, w] : std::vector<std::pair<int, int>>{{4, 4}, {8, 6}, {16, 12}}) {
        const Inputs in = make_inputs(1, 4, h, w, static_cast<std::uint64_t>(h * 100 + w));
        CHECK(run(net, in.x, in).shape() == Shape{1, 4, h, w});
    }
    const Inputs odd = make_inputs(1, 4, 5, 4, 7);
    CHECK_THROWS_AS(run(net, odd.x, odd), InvalidArgument);
}

TEST_CASE("garment taps reach the output and forwards are deterministic") {
    UNetConfig gc = small_config(false);
    const UNet garmentnet(gc, nn::Init(7, "unet"));
    UNet tryonnet(small_config(true), nn::Init(7, "unet"));
    tryonnet.expand_input_channels(13);

    const Tensor zg = random_tensor({1, 4, 8, 8}, 8);
    const Tensor prompt = random_tensor({1, 5, 8}, 9);
    const FeatureTapSet taps = garmentnet_forward(garmentnet, zg, prompt);
    REQUIRE(taps.size() == gc.site_ids().size());
    CHECK(taps.taps[0].site == "down.0");
    CHECK(taps.taps[0].tokens.shape() == Shape{1, 64, 16});
    CHECK(taps.taps[2].tokens.shape() == Shape{1, 16, 32});

    const FeatureTapSet again = garmentnet_forward(garmentnet, zg, prompt);
    for (std::size_t i = 0; i < taps.size(); ++i) CHECK(taps.taps[i].tokens == again.taps[i].tokens);

    const Inputs in = make_inputs(1, 13, 8, 8, 10);
    const Tensor a = run(tryonnet, in.x, in, &taps);
    CHECK(a == run(tryonnet, in.x, in, &taps));

    for (std::size_t site = 0; site < taps.size(); ++site) {
        FeatureTapSet perturbed = taps;
        perturbed.taps[site].tokens[0] += 0.5;
        const Tensor b = run(tryonnet, in.x, in, &perturbed);
        CHECK(b.shape() == a.shape());
        CHECK(max_abs_diff(a, b) > 0.0);
    }
}

TEST_CASE("encoder-only GarmentNet taps stop at the middle block") {
    UNetConfig gc = small_config(false);
    gc.fusion = FusionSites::encoder_only;
    const UNet garmentnet(gc, nn::Init(11, "unet"));
    const FeatureTapSet taps = garmentnet_forward(garmentnet, random_tensor({1, 4, 8, 8}, 12), random_tensor({1, 5, 8}, 13));
    CHECK(taps.size() == 3);
    CHECK(taps.taps.back().site == "mid");
}

TEST_CASE("tap misalignment is reported") {
    const UNet garmentnet(small_config(false), nn::Init(14, "unet"));
    UNet tryonnet(small_config(true), nn::Init(14, "unet"));
    tryonnet.expand_input_channels(13);
    FeatureTapSet taps = garmentnet_forward(garmentnet, random_tensor({1, 4, 8, 8}, 15), random_tensor({1, 5, 8}, 16));
    const Inputs in = make_inputs(1, 13, 8, 8, 17);
    FeatureTapSet short_set = taps;
    short_set.taps.pop_back();
    CHECK_THROWS_AS(run(tryonnet, in.x, in, &short_set), GarmentAlignmentError);
    const FeatureTapSet wrong = garmentnet_forward(garmentnet, random_tensor({1, 4, 4, 4}, 18), random_tensor({1, 5, 8}, 19));
    CHECK_THROWS_AS(run(tryonnet, in.x, in, &wrong), GarmentAlignmentError);
    CHECK_THROWS_AS(garmentnet_forward(garmentnet, random_tensor({1, 4, 5, 5}, 20), random_tensor({1, 5, 8}, 21)),
                    GarmentAlignmentError);
    CHECK_THROWS_AS(tryonnet_forward(tryonnet, ag::Var::constant(random_tensor({1, 4, 8, 8}, 22)), in.t,
                                     ag::Var::constant(in.text), ag::Var::constant(in.image), taps),
                    InvalidArgument);
}
