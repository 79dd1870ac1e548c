#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "panelcf/baseline.hpp"
#include "panelcf/inference.hpp"
#include "panelcf/mcnnm.hpp"
#include "panelcf/panel.hpp"

namespace panelcf {

// ---------------------------------------------------------------------------
// Synthetic panels

struct SyntheticSpec {
  Index n_units = 40;
  Index n_periods = 40;
  Index rank = 2;
  double noise_sd = 0.1;
  bool fixed_effects = false;  // add standard-normal unit and time effects
  Index treated_count = 0;     // last rows become treated
  std::optional<Index> last_observed;  // adoption column; default T/2 - 1
  double effect = 0.0;         // added to treated post-adoption cells
  std::uint64_t seed = 0;
};

struct SyntheticPanel {
  PanelMatrix panel;
  Eigen::MatrixXd low_rank;  // U V'
  Eigen::VectorXd unit_effects;
  Eigen::VectorXd time_effects;
  Eigen::MatrixXd noise;
  Eigen::MatrixXd untreated;  // outcome without the planted effect
  std::optional<TreatmentPlan> plan;
  Mask mask;
};

SyntheticPanel generate_synthetic_panel(const SyntheticSpec& spec);

// ---------------------------------------------------------------------------
// Estimators as interchangeable predictors

struct EstimatorInput {
  const PanelMatrix& panel;
  const Mask& mask;
  const CovariateSet& covariates;
  std::uint64_t seed = 0;
  bool fit_all_cells = false;  // masked cells enter the fit as observed (null imposed)
};

struct Estimator {
  std::string name;
  std::function<Eigen::MatrixXd(const EstimatorInput&)> predict;
};

struct EstimatorSettings {
  CvConfig mcnnm;
  ElasticNetConfig elastic_net;
  SynthControlOptions synth;
  Index max_rank = 5;
  int rank_folds = 5;
  int low_rank_max_iter = 2000;
  double low_rank_tol = 1e-8;
};

/// Predictor for a built-in method; tuning (lambda, penalty, rank) is
/// chosen by cross-validation seeded from the input seed.
Estimator standard_estimator(Method method, const EstimatorSettings& settings = {});

// ---------------------------------------------------------------------------
// Control-only placebo suite

enum class Adoption { staggered, simultaneous };

struct PlaceboConfig {
  double treated_fraction = 0.5;
  std::vector<double> t0_ratios{0.25, 0.5, 0.75};
  int n_trials = 20;
  Adoption adoption = Adoption::staggered;
  std::vector<Estimator> estimators;
  std::uint64_t seed = 0;
};

struct PlaceboCell {
  std::string estimator;
  double ratio = 0.0;
  std::vector<double> rmse;  // one per trial
  double mean = 0.0;
  double sd = 0.0;
  double lower = 0.0;  // mean - 1.96 sd
  double upper = 0.0;  // mean + 1.96 sd
};

struct PlaceboReport {
  std::vector<PlaceboCell> cells;  // sorted by estimator name, then ratio

  const PlaceboCell& at(const std::string& estimator, double ratio) const;
};

/// Pseudo-treatment of assignment for one trial: which units are hidden and
/// from which column. Exposed for tests and for the CLI's tidy output.
TreatmentPlan placebo_assignment(Index n_units, Index n_periods, double treated_fraction, double ratio,
                                 Adoption adoption, std::uint64_t seed);

PlaceboReport run_placebo_suite(const PanelMatrix& controls, const PlaceboConfig& config);

// ---------------------------------------------------------------------------
// Backdated zero-effect tests

struct BackdatingOptions {
  std::vector<Index> taus{1, 10, 25};
  std::vector<double> qs{1.0, 2.0};
  std::vector<Scheme> schemes{Scheme::iid, Scheme::iid_block, Scheme::moving_block};
  int n_permutations = 1000;
  std::uint64_t seed = 0;
  std::optional<Estimator> estimator;  // default: MC-NNM with cross-validated lambda
  bool null_imposed = true;            // trajectory from a fit that treats backdated cells as observed
};

struct BackdatingRow {
  Index tau = 0;
  double q = 1.0;
  Scheme scheme = Scheme::iid;
  double s_observed = 0.0;
  double p_value = 1.0;
  int n_permutations = 0;
  Index block_length = 0;
};

/// Drops every period after the earliest adoption, moves the adoption back
/// by tau and tests the zero-effect null on the tau backdated periods.
std::vector<BackdatingRow> backdating_test(const PanelMatrix& panel, const TreatmentPlan& plan,
                                           const CovariateSet& covariates, const BackdatingOptions& options);

}  // namespace panelcf
