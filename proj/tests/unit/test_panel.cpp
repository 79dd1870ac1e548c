#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "panelcf/panel.hpp"

using namespace panelcf;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// mean absolute difference over all ordered pairs / (2 * mean)
double pairwise_gini(const std::vector<double>& x) {
  double diff = 0.0;
  double total = 0.0;
  for (double a : x) {
    total += a;
    for (double b : x) diff += std::abs(a - b);
  }
  const double n = static_cast<double>(x.size());
  return diff / (2.0 * n * total);
}

}  // namespace

TEST(Panel, LabelsAndSelection) {
  Eigen::MatrixXd y(3, 4);
  y << 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12;
  PanelMatrix p(y, {"a", "b", "c"}, {2000, 2001, 2002, 2003});
  EXPECT_EQ(p.unit_index("b"), 1);
  EXPECT_FALSE(p.unit_index("z"));
  EXPECT_EQ(p.time_index(2002), 2);
  const std::vector<Index> rows{2, 0};
  const PanelMatrix s = p.select_units(rows);
  EXPECT_EQ(s.unit_ids()[0], "c");
  EXPECT_DOUBLE_EQ(s.values()(1, 3), 4.0);
  const PanelMatrix w = p.select_periods(1, 2);
  EXPECT_EQ(w.time_ids(), (std::vector<int>{2001, 2002}));
  EXPECT_DOUBLE_EQ(w.values()(2, 1), 11.0);
}

TEST(Panel, RejectsBadLabels) {
  EXPECT_THROW(PanelMatrix(Eigen::MatrixXd::Zero(2, 2), {"a", "a"}, {1, 2}), Error);
  EXPECT_THROW(PanelMatrix(Eigen::MatrixXd::Zero(2, 2), {"a", "b"}, {2, 1}), Error);
  EXPECT_THROW(PanelMatrix(Eigen::MatrixXd::Zero(2, 2), {"a"}, {1, 2}), Error);
}

TEST(Treatment, PlanAndMask) {
  TreatmentPlan plan({std::nullopt, 2, std::nullopt, 1});
  EXPECT_EQ(plan.treated_count(), 2);
  EXPECT_EQ(plan.control_units(), (std::vector<Index>{0, 2}));
  EXPECT_EQ(plan.earliest_adoption(), 1);
  const Mask m = build_mask(plan, 4, 5);
  EXPECT_EQ(m.missing_count(), 2 + 3);
  EXPECT_FALSE(m.is_missing(1, 2));
  EXPECT_TRUE(m.is_missing(1, 3));
  EXPECT_TRUE(m.is_missing(3, 2));
  EXPECT_FALSE(m.is_missing(0, 4));
}

TEST(Treatment, RequiresTreatedAndControlUnits) {
  EXPECT_THROW(TreatmentPlan({std::nullopt, std::nullopt}), Error);
  EXPECT_THROW(TreatmentPlan({1, 2}), Error);
  TreatmentPlan late({std::nullopt, 4});
  EXPECT_THROW(build_mask(late, 2, 5), Error);  // nothing left to predict
  TreatmentPlan early({std::nullopt, 0});
  EXPECT_THROW(build_mask(early, 2, 5), Error);
}

TEST(Treatment, FromTimes) {
  const std::vector<int> times{1990, 1991, 1992, 1993};
  const auto plan = TreatmentPlan::from_times({std::nullopt, 1992}, times);
  EXPECT_EQ(*plan.last_observed(1), 2);
  EXPECT_THROW(TreatmentPlan::from_times({std::nullopt, 1980}, times), Error);
}

TEST(Covariates, NormalizedDropsConstantColumns) {
  Eigen::MatrixXd raw(4, 3);
  raw << 1, 5, 2, 2, 5, 4, 3, 5, 6, 4, 5, 9;
  const auto cov = CovariateSet::normalized(raw, {"a", "const", "b"});
  ASSERT_EQ(cov.unit.cols(), 2);
  EXPECT_EQ(cov.unit_names, (std::vector<std::string>{"a", "b"}));
  ASSERT_EQ(cov.warnings.size(), 1u);
  for (Index j = 0; j < 2; ++j) {
    EXPECT_NEAR(cov.unit.col(j).mean(), 0.0, 1e-12);
    const double var = (cov.unit.col(j).array() - cov.unit.col(j).mean()).square().sum() / 3.0;
    EXPECT_NEAR(var, 1.0, 1e-12);
  }
}

TEST(Preprocess, FillsByRegimeAndReports) {
  std::vector<RawRecord> raw;
  // unit a: gap inside the pre regime and a leading gap in the post regime
  const double a[] = {1, kNaN, 3, kNaN, 5, 6};
  const double b[] = {2, 3, 4, 5, 6, 7};
  for (int t = 0; t < 6; ++t) {
    raw.push_back({"a", 10 + t, std::isnan(a[t]) ? std::nullopt : std::optional<double>(a[t])});
    raw.push_back({"b", 10 + t, b[t]});
  }
  PreprocessConfig cfg;
  cfg.split_time = 12;
  const auto out = preprocess(raw, cfg);
  EXPECT_EQ(out.imputed_cells, 2u);
  EXPECT_DOUBLE_EQ(out.panel.values()(0, 1), 1.0);  // forward from the pre regime
  EXPECT_DOUBLE_EQ(out.panel.values()(0, 3), 5.0);  // backward, not across the split
}

TEST(Preprocess, DeflatePopulationLog) {
  std::vector<RawRecord> raw{{"a", 1, 100.0}, {"a", 2, 300.0}, {"b", 1, 50.0}, {"b", 2, 80.0}};
  PreprocessConfig cfg;
  cfg.deflator = {{1, 1.0}, {2, 2.0}};
  cfg.population = {{{"a", 1}, 10.0}, {{"a", 2}, 10.0}, {{"b", 1}, 5.0}, {{"b", 2}, 8.0}};
  cfg.log_transform = true;
  const auto out = preprocess(raw, cfg);
  EXPECT_NEAR(out.panel.values()(0, 1), std::log(300.0 / 2.0 / 10.0), 1e-12);
  EXPECT_NEAR(out.panel.values()(1, 0), std::log(10.0), 1e-12);

  std::vector<RawRecord> bad{{"a", 1, -1.0}, {"a", 2, 1.0}};
  PreprocessConfig log_only;
  log_only.log_transform = true;
  EXPECT_THROW(preprocess(bad, log_only), Error);
}

TEST(Preprocess, DropsZeroVarianceAndDuplicates) {
  std::vector<RawRecord> raw{{"flat", 1, 2.0}, {"flat", 2, 2.0}, {"x", 1, 1.0}, {"x", 2, 2.0},
                             {"y", 1, 3.0},    {"y", 2, 1.0}};
  const auto out = preprocess(raw, {});
  EXPECT_EQ(out.dropped_units, (std::vector<std::string>{"flat"}));
  EXPECT_EQ(out.panel.n_units(), 2);

  raw.push_back({"x", 2, 5.0});
  EXPECT_THROW(preprocess(raw, {}), Error);
}

TEST(Preprocess, LocfNocb) {
  std::vector<double> s{kNaN, kNaN, 1.0, kNaN, 3.0, kNaN};
  EXPECT_EQ(fill_locf_nocb(s), 4u);
  EXPECT_EQ(s, (std::vector<double>{1, 1, 1, 1, 3, 3}));
  std::vector<double> empty{kNaN, kNaN};
  EXPECT_THROW(fill_locf_nocb(empty), Error);
}

TEST(Metrics, RmseMatchesBruteForce) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> z;
  Eigen::MatrixXd a(5, 7);
  Eigen::MatrixXd b(5, 7);
  BoolArray pick(5, 7);
  double sse = 0.0;
  int count = 0;
  for (Index i = 0; i < 5; ++i) {
    for (Index t = 0; t < 7; ++t) {
      a(i, t) = z(rng);
      b(i, t) = z(rng);
      pick(i, t) = (i + t) % 3 == 0;
      if (pick(i, t)) {
        sse += (a(i, t) - b(i, t)) * (a(i, t) - b(i, t));
        ++count;
      }
    }
  }
  EXPECT_NEAR(rmse(a, b, Mask(pick)), std::sqrt(sse / count), 1e-14);
  EXPECT_THROW(rmse(a, b, Mask::none(5, 7)), Error);
}

TEST(Metrics, GiniMatchesPairwiseDefinition) {
  std::mt19937_64 rng(2);
  std::lognormal_distribution<double> d(0.0, 1.0);
  std::vector<double> x(37);
  for (double& v : x) v = d(rng);
  EXPECT_NEAR(gini(x), pairwise_gini(x), 1e-12);
  EXPECT_NEAR(gini(std::vector<double>(5, 3.0)), 0.0, 1e-15);
  std::vector<double> one_owner{0, 0, 0, 10};
  EXPECT_NEAR(gini(one_owner), 0.75, 1e-15);
}

TEST(Metrics, AdjustedGini) {
  const std::vector<double> sizes{10, 20, 30, 40};
  const double g = gini(sizes);
  EXPECT_NEAR(adjusted_gini(sizes, 4, 8), 1.0 - 0.5 * (1.0 - g), 1e-14);
  EXPECT_NEAR(adjusted_gini(sizes, 4, 4), g, 1e-14);
  EXPECT_THROW(adjusted_gini(sizes, 4, 2), Error);
}

TEST(Metrics, ExpandBins) {
  const std::vector<SizeBin> bins{{0, 10, 2}, {10, 50, 1}};
  EXPECT_EQ(expand_bins(bins), (std::vector<double>{5, 5, 30}));
}
