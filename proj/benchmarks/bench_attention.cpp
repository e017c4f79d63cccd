#include <benchmark/benchmark.h>

#include "vtonlab/attention.hpp"
#include "vtonlab/rng.hpp"

using namespace vtonlab;

static Tensor randn(Shape shape, std::uint64_t seed) {
  Rng rng(seed);
  return Tensor::randn(std::move(shape), rng);
}

static void BM_FusedSelfAttention(benchmark::State& state) {
  const std::int64_t n = state.range(0), d = 32;
  SelfAttnWeights w{randn({d, d}, 1), randn({d, d}, 2), randn({d, d}, 3), randn({d, d}, 4), 2};
  const TokenSequence tryon{randn({1, n, d}, 5), TokenOrigin::spatial};
  const TokenSequence garment{randn({1, n, d}, 6), TokenOrigin::garment};
  for (auto _ : state) {
    benchmark::DoNotOptimize(garment_fused_self_attention(tryon, garment, w));
  }
}
BENCHMARK(BM_FusedSelfAttention)->Arg(48)->Arg(192);

static void BM_DecoupledCrossAttention(benchmark::State& state) {
  const std::int64_t n = state.range(0), d = 32;
  DecoupledAttnWeights w{randn({d, d}, 1), randn({d, d}, 2), randn({d, d}, 3),
                         randn({d, d}, 4), randn({d, d}, 5), randn({d, d}, 6), 2};
  const TokenSequence x{randn({1, n, d}, 7), TokenOrigin::spatial};
  const TokenSequence text{randn({1, 16, d}, 8), TokenOrigin::text};
  const TokenSequence image{randn({1, 4, d}, 9), TokenOrigin::image_prompt};
  for (auto _ : state) {
    benchmark::DoNotOptimize(decoupled_cross_attention(x, text, image, w));
  }
}
BENCHMARK(BM_DecoupledCrossAttention)->Arg(48)->Arg(192);

BENCHMARK_MAIN();
