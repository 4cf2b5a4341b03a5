#include <benchmark/benchmark.h>

#include <lqglm/lqglm.hpp>

using namespace lqglm;

namespace {

ModelData poisson_data(int n) {
  SimDesign d;
  d.n = n;
  RngStream rng(20260101, 0);
  const ModelData clean = gen_dataset(d, rng);
  const Contamination c = contaminate(clean.y(), 0.05, 5.0, rng);
  return ModelData(clean.x(), c.y, poisson(), canonical_link());
}

void BM_FitVaso(benchmark::State& state) {
  const ModelData d = datasets::vaso_model();
  FitControl c;
  c.q = static_cast<double>(state.range(0)) / 100.0;
  for (auto _ : state) benchmark::DoNotOptimize(fit_mlq(d, c));
}
BENCHMARK(BM_FitVaso)->Arg(100)->Arg(90)->Arg(79)->Unit(benchmark::kMicrosecond);

void BM_FitPoisson(benchmark::State& state) {
  const ModelData d = poisson_data(static_cast<int>(state.range(0)));
  FitControl c;
  c.q = 0.97;
  for (auto _ : state) benchmark::DoNotOptimize(fit_mlq(d, c));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_FitPoisson)->RangeMultiplier(4)->Range(100, 6400)->Complexity()
    ->Unit(benchmark::kMicrosecond);

void BM_SelectQ(benchmark::State& state) {
  const ModelData d = datasets::vaso_model();
  for (auto _ : state) {
    benchmark::DoNotOptimize(select_q_stability(d, QGrid(0.70, 0.01, 0.05), FitControl{}));
  }
}
BENCHMARK(BM_SelectQ)->Unit(benchmark::kMillisecond);

void BM_Study(benchmark::State& state) {
  SimDesign d;
  d.eps = 0.05;
  d.nu = 5.0;
  d.reps = 100;
  d.q_list = {1.0, 0.97};
  d.seed = 20260105;
  const int jobs = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(run_study(d, jobs));
}
BENCHMARK(BM_Study)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond)->UseRealTime();

}  // namespace

BENCHMARK_MAIN();
