#include <gtest/gtest.h>

#include <algorithm>

#include "panelcf/placebo.hpp"

using namespace panelcf;

namespace {

Estimator truth_oracle(const Eigen::MatrixXd& truth) {
  return {"oracle", [truth](const EstimatorInput&) { return truth; }};
}

}  // namespace

TEST(Generator, NoiselessPanelHasExactRank) {
  SyntheticSpec spec;
  spec.n_units = 15;
  spec.n_periods = 12;
  spec.rank = 3;
  spec.noise_sd = 0.0;
  spec.seed = 1;
  const auto sim = generate_synthetic_panel(spec);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(sim.panel.values());
  const auto& s = svd.singularValues();
  EXPECT_GT(s(2), 1e-6 * s(0));
  EXPECT_LT(s(3), 1e-10 * s(0));
}

TEST(Generator, SeedDeterminesOutput) {
  SyntheticSpec spec;
  spec.fixed_effects = true;
  spec.treated_count = 5;
  spec.effect = 1.0;
  spec.seed = 8;
  const auto a = generate_synthetic_panel(spec);
  const auto b = generate_synthetic_panel(spec);
  EXPECT_EQ(a.panel.values(), b.panel.values());
  spec.seed = 9;
  EXPECT_NE(generate_synthetic_panel(spec).panel.values(), a.panel.values());
  // planted effect lands exactly on the missing cells
  const Eigen::MatrixXd diff = a.panel.values() - a.untreated;
  EXPECT_NEAR(diff.sum(), static_cast<double>(a.mask.missing_count()), 1e-9);
}

TEST(Generator, NoiseAveragesToZero) {
  SyntheticSpec spec;
  spec.n_units = 60;
  spec.n_periods = 50;
  spec.noise_sd = 0.7;
  spec.seed = 3;
  const auto sim = generate_synthetic_panel(spec);
  EXPECT_LT(std::abs(sim.noise.mean()), 4.0 * 0.7 / std::sqrt(60.0 * 50.0));
}

TEST(Generator, RejectsInvalidSpecs) {
  SyntheticSpec spec;
  spec.rank = 0;
  EXPECT_THROW(generate_synthetic_panel(spec), Error);
  spec.rank = 2;
  spec.noise_sd = -1.0;
  EXPECT_THROW(generate_synthetic_panel(spec), Error);
}

TEST(PlaceboAssignment, FractionAndBand) {
  const auto plan = placebo_assignment(30, 60, 0.5, 0.5, Adoption::staggered, 4);
  EXPECT_EQ(plan.treated_count(), 15);
  for (Index i : plan.treated_units()) {
    EXPECT_GE(*plan.last_observed(i), 29 - 6);
    EXPECT_LE(*plan.last_observed(i), 29 + 6);
  }
  const auto sim = placebo_assignment(30, 60, 0.5, 0.25, Adoption::simultaneous, 4);
  for (Index i : sim.treated_units()) EXPECT_EQ(*sim.last_observed(i), 14);
  EXPECT_THROW(placebo_assignment(3, 10, 0.1, 0.5, Adoption::staggered, 1), Error);
  EXPECT_THROW(placebo_assignment(10, 10, 0.5, 1.0, Adoption::staggered, 1), Error);
}

TEST(PlaceboSuite, OracleHasZeroError) {
  SyntheticSpec spec;
  spec.n_units = 10;
  spec.n_periods = 20;
  spec.seed = 2;
  const auto sim = generate_synthetic_panel(spec);
  PlaceboConfig cfg;
  cfg.n_trials = 4;
  cfg.estimators = {truth_oracle(sim.panel.values())};
  const auto report = run_placebo_suite(sim.panel, cfg);
  ASSERT_EQ(report.cells.size(), 3u);
  for (const auto& c : report.cells) {
    EXPECT_EQ(c.rmse.size(), 4u);
    EXPECT_EQ(c.mean, 0.0);
    EXPECT_EQ(c.lower, c.upper);
  }
}

TEST(PlaceboSuite, ConstantPanelEveryEstimatorExact) {
  const PanelMatrix flat = PanelMatrix::from_values(Eigen::MatrixXd::Constant(12, 20, 4.5));
  PlaceboConfig cfg;
  cfg.n_trials = 2;
  cfg.t0_ratios = {0.5};
  for (Method m : all_methods()) cfg.estimators.push_back(standard_estimator(m));
  const auto report = run_placebo_suite(flat, cfg);
  ASSERT_EQ(report.cells.size(), 7u);
  for (const auto& c : report.cells) {
    EXPECT_LT(c.mean, 1e-8) << c.estimator;
    EXPECT_LE(c.lower, c.mean);
    EXPECT_GE(c.upper, c.mean);
  }
}

TEST(PlaceboSuite, InvariantToEstimatorOrder) {
  SyntheticSpec spec;
  spec.n_units = 14;
  spec.n_periods = 20;
  spec.seed = 5;
  const auto sim = generate_synthetic_panel(spec);
  PlaceboConfig cfg;
  cfg.n_trials = 3;
  cfg.t0_ratios = {0.5, 0.75};
  cfg.seed = 11;
  cfg.estimators = {standard_estimator(Method::did), standard_estimator(Method::svd),
                    standard_estimator(Method::sc_adh)};
  const auto a = run_placebo_suite(sim.panel, cfg);
  std::reverse(cfg.estimators.begin(), cfg.estimators.end());
  const auto b = run_placebo_suite(sim.panel, cfg);
  ASSERT_EQ(a.cells.size(), b.cells.size());
  for (std::size_t k = 0; k < a.cells.size(); ++k) {
    EXPECT_EQ(a.cells[k].estimator, b.cells[k].estimator);
    EXPECT_EQ(a.cells[k].rmse, b.cells[k].rmse);
  }
  EXPECT_EQ(a.at("SVD", 0.75).rmse.size(), 3u);
  EXPECT_THROW(a.at("PCA", 0.75), Error);
}

TEST(PlaceboSuite, RejectsBadConfigs) {
  const PanelMatrix p = PanelMatrix::from_values(Eigen::MatrixXd::Random(6, 10));
  PlaceboConfig cfg;
  EXPECT_THROW(run_placebo_suite(p, cfg), Error);  // no estimators
  cfg.estimators = {standard_estimator(Method::did)};
  cfg.treated_fraction = 0.05;
  EXPECT_THROW(run_placebo_suite(p, cfg), Error);
  cfg.treated_fraction = 0.5;
  cfg.t0_ratios = {1.2};
  EXPECT_THROW(run_placebo_suite(p, cfg), Error);
}

TEST(Backdating, TableLayoutAndErrors) {
  SyntheticSpec spec;
  spec.n_units = 16;
  spec.n_periods = 30;
  spec.treated_count = 4;
  spec.last_observed = 24;
  spec.seed = 6;
  const auto sim = generate_synthetic_panel(spec);
  BackdatingOptions opts;
  opts.taus = {1, 5};
  opts.n_permutations = 50;
  opts.estimator = standard_estimator(Method::did);
  const auto rows = backdating_test(sim.panel, *sim.plan, CovariateSet::none(16), opts);
  EXPECT_EQ(rows.size(), 2u * 2u * 3u);
  for (const auto& r : rows) {
    EXPECT_GE(r.p_value, 0.0);
    EXPECT_LE(r.p_value, 1.0);
    if (r.scheme == Scheme::moving_block) EXPECT_EQ(r.n_permutations, 24);  // truncated T = 25
  }
  opts.taus = {25};  // equals the pre-period length
  EXPECT_THROW(backdating_test(sim.panel, *sim.plan, CovariateSet::none(16), opts), Error);
  opts.taus = {24};  // one training period
  EXPECT_THROW(backdating_test(sim.panel, *sim.plan, CovariateSet::none(16), opts), Error);
}

TEST(Backdating, NullSimulationRarelyRejects) {
  int accepted = 0;
  const int sims = 200;
  for (int s = 0; s < sims; ++s) {
    SyntheticSpec spec;
    spec.n_units = 20;
    spec.n_periods = 40;
    spec.rank = 2;
    spec.noise_sd = 0.5;
    spec.fixed_effects = true;
    spec.treated_count = 6;
    spec.last_observed = 34;
    spec.seed = 1000 + static_cast<std::uint64_t>(s);
    const auto sim = generate_synthetic_panel(spec);
    BackdatingOptions opts;
    opts.taus = {10};
    opts.qs = {1.0};
    opts.schemes = {Scheme::iid};
    opts.n_permutations = 200;
    opts.seed = static_cast<std::uint64_t>(s);
    const auto rows = backdating_test(sim.panel, *sim.plan, CovariateSet::none(20), opts);
    accepted += rows.front().p_value > 0.05 ? 1 : 0;
  }
  EXPECT_GE(accepted, 180);
}
