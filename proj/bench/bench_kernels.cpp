#include <benchmark/benchmark.h>

#include "opid/gauss_newton.hpp"
#include "opid/greedy.hpp"
#include "opid/harness.hpp"

namespace {

using namespace opid;

Execution exec_of(const benchmark::State& state) {
  return state.range(0) == 0 ? Execution::Serial : Execution::Parallel;
}

struct Fixture {
  Scenario scenario;
  BasisSet basis;
  std::vector<ControlSignal> controls;
  Vec alpha_star;
  Vec alpha_circ;
};

const Fixture& fixture() {
  static const Fixture f = [] {
    Scenario s = drift_scenario(random_drift_instance(3, 3, 3, 0.01, 11));
    BasisSet basis(s.elements);
    std::vector<ControlSignal> controls;
    for (int m = 0; m < basis.size(); ++m) {
      Mat v = Mat::Zero(10, 3);
      for (int k = 0; k < 10; ++k) v(k, m % 3) = std::sin(0.7 * (k + 1) * (m + 1));
      controls.emplace_back(v, s.model.horizon);
    }
    const Vec star = basis.coefficients_of(s.op_star);
    const Vec circ = basis.coefficients_of(s.op_circ);
    return Fixture{std::move(s), std::move(basis), std::move(controls), star, circ};
  }();
  return f;
}

void BM_SimulateData(benchmark::State& state) {
  const Fixture& f = fixture();
  for (auto _ : state) {
    benchmark::DoNotOptimize(simulate_data(f.scenario.model, f.basis, f.alpha_star, f.controls,
                                           0, exec_of(state)));
  }
}

void BM_Jacobian(benchmark::State& state) {
  const Fixture& f = fixture();
  const GNProblem p = make_problem(f.scenario.model, f.basis, f.controls, f.alpha_star, 0,
                                   exec_of(state));
  for (auto _ : state) benchmark::DoNotOptimize(jacobian(p, f.alpha_circ));
}

void BM_Sweep(benchmark::State& state) {
  const Fixture& f = fixture();
  Scenario s = f.scenario;
  s.exec = exec_of(state);
  s.radii = {0.1};
  s.trials = 8;
  for (auto _ : state) benchmark::DoNotOptimize(run_sweep(s, f.controls, f.basis));
}

void BM_Lgr(benchmark::State& state) {
  const Fixture& f = fixture();
  GreedySettings settings;
  settings.opt.exec = exec_of(state);
  settings.opt.multistart = 2;
  for (auto _ : state) {
    benchmark::DoNotOptimize(lgr(f.scenario.model, BasisSet(f.scenario.elements),
                                 f.alpha_circ, settings));
  }
}

}  // namespace

BENCHMARK(BM_SimulateData)->ArgName("parallel")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Jacobian)->ArgName("parallel")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Sweep)->ArgName("parallel")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Lgr)->ArgName("parallel")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond)->Iterations(1);

BENCHMARK_MAIN();
