#include <benchmark/benchmark.h>

#include "vtonlab/pipeline.hpp"
#include "vtonlab/synthetic.hpp"
#include "vtonlab/training.hpp"

using namespace vtonlab;

static void BM_TrainStep(benchmark::State& state) {
  ModelBundle bundle = ModelBundle::create(BundleConfig{});
  apply_partition(bundle, partition_parameters(bundle));
  const NoiseSchedule sched = make_schedule(200, ScheduleKind::scaled_linear);
  SyntheticSpec spec;
  spec.n_samples = static_cast<int>(state.range(0));
  std::vector<PreparedSample> prepared;
  for (const auto& s : render_dataset(spec)) prepared.push_back(prepare_sample(bundle, s));
  std::vector<const PreparedSample*> members;
  for (const auto& p : prepared) members.push_back(&p);
  Adam adam({});
  Rng rng(1);
  for (auto _ : state) {
    const TrainingBatch batch = make_batch(bundle, members, AugmentationConfig{}, 0.1, sched, rng);
    benchmark::DoNotOptimize(train_step(batch, bundle, adam, sched));
  }
}
BENCHMARK(BM_TrainStep)->Arg(8)->Unit(benchmark::kMillisecond);

static void BM_Tryon(benchmark::State& state) {
  const ModelBundle bundle = ModelBundle::create(BundleConfig{});
  const NoiseSchedule sched = make_schedule(200, ScheduleKind::scaled_linear);
  SyntheticSpec spec;
  spec.n_samples = 1;
  const TrainingSample s = render_dataset(spec)[0];
  TryonRequest request{s.person, s.garment, s.mask, s.pose, s.attrs};
  request.steps = static_cast<int>(state.range(0));
  for (auto _ : state) {
    benchmark::DoNotOptimize(tryon(request, bundle, sched));
  }
}
BENCHMARK(BM_Tryon)->Arg(30)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
