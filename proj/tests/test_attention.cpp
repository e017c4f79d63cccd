#include <cmath>

#include "doctest.h"
#include "oracles.hpp"
#include "test_util.hpp"
#include "vtonlab/attention.hpp"
#include "vtonlab/errors.hpp"

using namespace vtonlab;
using vtonlab::test::random_tensor;

namespace {

TokenSequence seq(Tensor t, TokenOrigin o = TokenOrigin::spatial) { return {std::move(t), o}; }

Tensor identity(std::int64_t d) {
    Tensor m({d, d});
    for (std::int64_t i = 0; i < d; ++i) m[i * d + i] = 1.0;
    return m;
}

}  // namespace

TEST_CASE("single key broadcasts its value") {
    const Tensor q = random_tensor({2, 5, 4}, 1);
    const Tensor k = random_tensor({2, 1, 4}, 2);
    const Tensor v = random_tensor({2, 1, 4}, 3);
    const Tensor out = scaled_dot_attention(seq(q), seq(k), seq(v)).data;
    REQUIRE(out.shape() == Shape{2, 5, 4});
    for (std::int64_t b = 0; b < 2; ++b)
        for (std::int64_t i = 0; i < 5; ++i)
            for (std::int64_t c = 0; c < 4; ++c) CHECK(std::abs(out[(b * 5 + i) * 4 + c] - v[b * 4 + c]) < 1e-12);
}

TEST_CASE("zero query averages the values") {
    const Tensor q({1, 3, 4});
    const Tensor k = random_tensor({1, 6, 4}, 4);
    const Tensor v = random_tensor({1, 6, 4}, 5);
    const Tensor out = scaled_dot_attention(seq(q), seq(k), seq(v)).data;
    for (std::int64_t c = 0; c < 4; ++c) {
        double mean = 0.0;
        for (std::int64_t j = 0; j < 6; ++j) mean += v[j * 4 + c];
        mean /= 6.0;
        for (std::int64_t i = 0; i < 3; ++i) CHECK(std::abs(out[i * 4 + c] - mean) < 1e-12);
    }
}

TEST_CASE("scaled_dot_attention matches the loop oracle") {
    for (std::uint64_t s = 0; s < 5; ++s) {
        const Tensor q = random_tensor({2, 2, 3}, 10 + s);
        const Tensor k = random_tensor({2, 2, 3}, 20 + s);
        const Tensor v = random_tensor({2, 2, 3}, 30 + s);
        CHECK(max_abs_diff(scaled_dot_attention(seq(q), seq(k), seq(v)).data, oracle::attention(q, k, v, 1)) < 1e-6);
    }
    CHECK_THROWS_AS(scaled_dot_attention(seq(Tensor({1, 2, 3})), seq(Tensor({1, 2, 4})), seq(Tensor({1, 2, 4}))),
                    InvalidArgument);
}

TEST_CASE("decoupled cross-attention branch cases") {
    const std::int64_t d = 8, dc = 6;
    DecoupledAttnWeights w;
    w.w_q = random_tensor({d, d}, 40);
    w.w_kc = random_tensor({d, dc}, 41);
    w.w_vc = random_tensor({d, dc}, 42);
    w.w_ki = random_tensor({d, dc}, 43);
    w.w_vi = random_tensor({d, dc}, 44);
    w.w_out = random_tensor({d, d}, 45);
    w.heads = 2;
    const Tensor x = random_tensor({2, 5, d}, 46);
    const Tensor text = random_tensor({2, 7, dc}, 47);
    const Tensor image = random_tensor({2, 4, dc}, 48);

    SUBCASE("sum of two independent attentions") {
        const Tensor q = oracle::project(x, w.w_q);
        Tensor z = oracle::attention(q, oracle::project(text, w.w_kc), oracle::project(text, w.w_vc), 2);
        z += oracle::attention(q, oracle::project(image, w.w_ki), oracle::project(image, w.w_vi), 2);
        const Tensor expected = oracle::project(z, w.w_out);
        const Tensor got =
            decoupled_cross_attention(seq(x), seq(text, TokenOrigin::text), seq(image, TokenOrigin::image_prompt), w)
                .data;
        CHECK(max_abs_diff(got, expected) < 1e-6);
    }
    SUBCASE("zero image values reduce to text-only attention") {
        DecoupledAttnWeights w0 = w;
        w0.w_vi = Tensor(w.w_vi.shape());
        const Tensor q = oracle::project(x, w.w_q);
        const Tensor text_only = oracle::project(
            oracle::attention(q, oracle::project(text, w.w_kc), oracle::project(text, w.w_vc), 2), w.w_out);
        CHECK(max_abs_diff(decoupled_cross_attention(seq(x), seq(text), seq(image), w0).data, text_only) < 1e-12);
    }
    SUBCASE("both value projections zero give zero output") {
        DecoupledAttnWeights w0 = w;
        w0.w_vi = Tensor(w.w_vi.shape());
        w0.w_vc = Tensor(w.w_vc.shape());
        CHECK(decoupled_cross_attention(seq(x), seq(text), seq(image), w0).data.max_abs() == 0.0);
    }
}

TEST_CASE("garment fusion equals the first half of 2N attention") {
    const std::int64_t d = 8;
    SelfAttnWeights w;
    w.w_q = random_tensor({d, d}, 50);
    w.w_k = random_tensor({d, d}, 51);
    w.w_v = random_tensor({d, d}, 52);
    w.w_out = random_tensor({d, d}, 53);
    w.heads = 2;
    for (std::int64_t n : {1, 3, 6}) {
        const Tensor tryon = random_tensor({2, n, d}, 60 + n);
        const Tensor garment = random_tensor({2, n, d}, 70 + n);
        const Tensor full =
            oracle::full_self_attention(oracle::concat_tokens(tryon, garment), w.w_q, w.w_k, w.w_v, w.w_out, 2);
        const Tensor got = garment_fused_self_attention(seq(tryon), seq(garment, TokenOrigin::garment), w).data;
        CHECK(got.shape() == tryon.shape());
        CHECK(max_abs_diff(got, oracle::first_tokens(full, n)) < 1e-6);

        const Tensor dup =
            oracle::full_self_attention(oracle::concat_tokens(tryon, tryon), w.w_q, w.w_k, w.w_v, w.w_out, 2);
        CHECK(max_abs_diff(garment_fused_self_attention(seq(tryon), seq(tryon), w).data,
                           oracle::first_tokens(dup, n)) < 1e-6);
    }
}

TEST_CASE("garment fusion two-token closed form") {
    SelfAttnWeights w{identity(1), identity(1), identity(1), identity(1), 1};
    const double a = 0.7, g = -1.3;
    const Tensor out = garment_fused_self_attention(seq(Tensor({1, 1, 1}, a)), seq(Tensor({1, 1, 1}, g)), w).data;
    const double ea = std::exp(a * a), eg = std::exp(a * g);
    CHECK(std::abs(out[0] - (ea * a + eg * g) / (ea + eg)) < 1e-12);
}

TEST_CASE("garment fusion rejects misaligned taps") {
    const std::int64_t d = 4;
    SelfAttnWeights w{identity(d), identity(d), identity(d), identity(d), 1};
    CHECK_THROWS_AS(garment_fused_self_attention(seq(Tensor({1, 3, d})), seq(Tensor({1, 2, d})), w),
                    GarmentAlignmentError);
    CHECK_THROWS_AS(garment_fused_self_attention(seq(Tensor({1, 3, d})), seq(Tensor({1, 3, d + 1})), w),
                    GarmentAlignmentError);
}
