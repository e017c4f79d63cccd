#include <benchmark/benchmark.h>

#include "vtonlab/metrics.hpp"
#include "vtonlab/rng.hpp"

using namespace vtonlab;

static Tensor image(std::uint64_t seed) {
  Rng rng(seed);
  return Tensor::uniform({3, 64, 48}, rng, 0.0, 1.0);
}

static void BM_Ssim(benchmark::State& state) {
  const Tensor a = image(1), b = image(2);
  for (auto _ : state) {
    benchmark::DoNotOptimize(ssim(a, b));
  }
}
BENCHMARK(BM_Ssim);

static void BM_Lpips(benchmark::State& state) {
  const auto fx = default_feature_extractor(0);
  const Tensor a = image(1), b = image(2);
  for (auto _ : state) {
    benchmark::DoNotOptimize(lpips(a, b, *fx));
  }
}
BENCHMARK(BM_Lpips);

static void BM_FrechetDistance(benchmark::State& state) {
  Rng rng(3);
  const Tensor a = Tensor::randn({state.range(0), 32}, rng);
  const Tensor b = Tensor::randn({state.range(0), 32}, rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(frechet_distance(a, b));
  }
}
BENCHMARK(BM_FrechetDistance)->Arg(256)->Arg(2048);

BENCHMARK_MAIN();
