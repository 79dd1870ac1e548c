#include <benchmark/benchmark.h>

#include "panelcf/baseline.hpp"
#include "panelcf/inference.hpp"
#include "panelcf/mcnnm.hpp"
#include "panelcf/parallel.hpp"
#include "panelcf/placebo.hpp"

namespace {

panelcf::SyntheticPanel panel_of(benchmark::State& state) {
  panelcf::SyntheticSpec spec;
  spec.n_units = state.range(0);
  spec.n_periods = state.range(0);
  spec.rank = 2;
  spec.treated_count = state.range(0) / 2;
  spec.seed = 11;
  return panelcf::generate_synthetic_panel(spec);
}

void BM_SoftThreshold(benchmark::State& state) {
  const Eigen::MatrixXd z = Eigen::MatrixXd::Random(state.range(0), state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(panelcf::soft_threshold(z, 0.5));
}
BENCHMARK(BM_SoftThreshold)->Arg(40)->Arg(160);

void BM_McnnmFixedLambda(benchmark::State& state) {
  const auto sim = panel_of(state);
  const auto cov = panelcf::CovariateSet::none(sim.panel.n_units());
  const double lam = 0.05 * panelcf::lambda_max(sim.panel, sim.mask, cov);
  for (auto _ : state) {
    benchmark::DoNotOptimize(panelcf::fit_mcnnm(sim.panel, sim.mask, cov, {lam, 500, 1e-6}));
  }
}
BENCHMARK(BM_McnnmFixedLambda)->Arg(40)->Arg(160)->Unit(benchmark::kMillisecond);

void BM_McnnmCrossValidated(benchmark::State& state) {
  panelcf::set_thread_limit(1);
  const auto sim = panel_of(state);
  const auto cov = panelcf::CovariateSet::none(sim.panel.n_units());
  for (auto _ : state) benchmark::DoNotOptimize(panelcf::fit_mcnnm_cv(sim.panel, sim.mask, cov, {}));
  panelcf::set_thread_limit(0);
}
BENCHMARK(BM_McnnmCrossValidated)->Arg(40)->Unit(benchmark::kMillisecond);

void BM_ElasticNet(benchmark::State& state) {
  const auto sim = panel_of(state);
  const auto o = state.range(1) == 0 ? panelcf::Orientation::horizontal : panelcf::Orientation::vertical;
  for (auto _ : state) benchmark::DoNotOptimize(panelcf::fit_elastic_net(sim.panel, sim.mask, o));
}
BENCHMARK(BM_ElasticNet)->Args({40, 0})->Args({40, 1})->Unit(benchmark::kMillisecond);

void BM_SynthControl(benchmark::State& state) {
  const auto sim = panel_of(state);
  const auto cov = panelcf::CovariateSet::none(sim.panel.n_units());
  for (auto _ : state) benchmark::DoNotOptimize(panelcf::fit_synth_control(sim.panel, sim.mask, cov));
}
BENCHMARK(BM_SynthControl)->Arg(40)->Unit(benchmark::kMillisecond);

void BM_PermutationTest(benchmark::State& state) {
  const Eigen::VectorXd trajectory = Eigen::VectorXd::Random(state.range(0));
  panelcf::PermutationOptions opts;
  opts.scheme = static_cast<panelcf::Scheme>(state.range(1));
  for (auto _ : state) {
    benchmark::DoNotOptimize(panelcf::permutation_test(trajectory, state.range(0) / 3, opts));
  }
}
BENCHMARK(BM_PermutationTest)->Args({159, 0})->Args({159, 1})->Args({159, 2});

}  // namespace
BENCHMARK_MAIN();
