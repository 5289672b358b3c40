// Serial reference vs OpenMP execution of the parallel kernels. The
// `execution` argument is 0 for serial and 1 for parallel.

#include <benchmark/benchmark.h>

#include "compop/inference.hpp"
#include "compop/planning.hpp"
#include "compop/simulate.hpp"

using namespace compop;

namespace {

Execution execution(const benchmark::State& state) {
  return state.range(0) == 0 ? Execution::kSerial : Execution::kParallel;
}

DesignSpec two_subsets() {
  DesignSpec s;
  s.subsets = {{"S1", 0.5, {}}, {"S2", 0.5, {}}};
  s.composites = {{0}, {0, 1}};
  s.n_covariates = 1;
  return validate(s);
}

DesignSpec four_composites() {
  DesignSpec s;
  s.subsets = {{"A", 0.2, {}}, {"B", 0.3, {}}, {"C", 0.5, {}}};
  s.composites = {{0}, {1}, {0, 1}, {0, 1, 2}};
  return validate(s);
}

const SubsetAssumptions kAssumed{{1.0, 1.0, 0.16}, {0.0, 1.0, 0.16}};

void sigma_a(benchmark::State& state) {
  SigmaASettings s;
  s.runs = 2000;
  s.per_run_n = 2000;
  s.route = state.range(1) == 0 ? SigmaARoute::kSubjectLevel : SigmaARoute::kSufficientStatistic;
  s.execution = execution(state);
  const DesignSpec spec = two_subsets();
  for (auto _ : state) benchmark::DoNotOptimize(estimate_sigma_a(spec, kAssumed, s));
}
BENCHMARK(sigma_a)->ArgsProduct({{0, 1}, {0, 1}})->ArgNames({"parallel", "sufficient"})->Unit(benchmark::kMillisecond);

void closed_test_plan(benchmark::State& state) {
  const DesignSpec spec = four_composites();
  for (auto _ : state) {
    ClosedTestPlan plan(spec, {}, execution(state));
    benchmark::DoNotOptimize(plan.critical_value(1));
  }
}
BENCHMARK(closed_test_plan)->Arg(0)->Arg(1)->ArgName("parallel")->Unit(benchmark::kMillisecond);

void scenario(benchmark::State& state) {
  ScenarioConfig c;
  c.name = "bench";
  c.design = two_subsets();
  c.assumed = kAssumed;
  c.truth = {{1.0, 1.2, 0.16}, {0.0, 1.2, 0.16}};
  c.nu = 0.5;
  c.runs = 200;
  c.planning.sigma_a.runs = 2000;
  c.planning.sigma_a.per_run_n = 2000;
  c.recalc_sigma_a.runs = 1000;
  c.compute_oracle = false;
  GridSettings g;
  g.workers = benchmark::CPUInfo::Get().num_cpus;
  g.execution = execution(state);
  for (auto _ : state) benchmark::DoNotOptimize(run_scenario(c, g));
}
BENCHMARK(scenario)->Arg(0)->Arg(1)->ArgName("parallel")->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
