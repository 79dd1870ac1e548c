#pragma once

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include "panelcf/panel.hpp"

namespace panelcf {

enum class Method { mcnnm, did, hr_en, vt_en, pca, sc_adh, svd };

std::string_view method_name(Method method);
std::optional<Method> parse_method(std::string_view name);
const std::vector<Method>& all_methods();

/// Complete prediction matrix from a benchmark estimator.
struct BaselineFit {
  Method method = Method::did;
  Eigen::MatrixXd y_hat;
  nlohmann::json diagnostics = nlohmann::json::object();
};

// ---------------------------------------------------------------------------
// Two-way fixed effects

/// Unit and time effects are estimated on the observed cells; each missing
/// cell gets its own treatment indicator, so the reported coefficient is the
/// mean observed-minus-imputed gap over missing cells that carry an outcome.
BaselineFit fit_did_binary(const PanelMatrix& panel, const Mask& mask);

// ---------------------------------------------------------------------------
// Elastic net

struct ElasticNetModel {
  double intercept = 0.0;
  Eigen::VectorXd coef;
  double penalty = 0.0;
  double mix = 1.0;
  int sweeps = 0;
  bool converged = false;
};

struct ElasticNetOptions {
  int max_sweeps = 100000;
  double tol = 1e-7;  // max squared standardized coefficient change, relative to var(y)
};

/// Coordinate descent on
///   (1/2n) ||y - b0 - X b||^2 + penalty * (mix |b|_1 + (1 - mix)/2 |b|^2)
/// with standardized predictors. Constant predictors receive a zero
/// coefficient. An infinite penalty yields the intercept-only model.
ElasticNetModel elastic_net(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double penalty, double mix,
                            const ElasticNetOptions& options = {}, const ElasticNetModel* warm = nullptr);

struct ElasticNetConfig {
  std::vector<double> mixes{0.1, 0.5, 0.9};
  std::size_t path_length = 20;
  double min_ratio = 1e-3;
  int n_folds = 5;
  std::optional<double> penalty;  // fixed penalty: skips cross-validation
  std::optional<double> mix;      // used with a fixed penalty; default 0.5
  ElasticNetOptions solver;
  std::uint64_t seed = 0;
  bool fit_all_periods = false;  // vertical only: treated rows train on every period
};

/// Chooses (mix, penalty) by K-fold CV with caller-supplied fold labels,
/// then refits on all rows.
ElasticNetModel elastic_net_cv(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                               const std::vector<int>& fold_of_row, const ElasticNetConfig& config);

enum class Orientation { horizontal, vertical };

BaselineFit fit_elastic_net(const PanelMatrix& panel, const Mask& mask, Orientation orientation,
                            const ElasticNetConfig& config = {});

// ---------------------------------------------------------------------------
// Low-rank imputation

struct LowRankOptions {
  Index rank = 1;
  int max_iter = 2000;
  double tol = 1e-10;                       // relative change of the completed matrix
  std::optional<std::uint64_t> init_seed;   // random fill instead of column means
};

/// Regularized iterative PCA: column-centered rank-r reconstruction with
/// singular values shrunk by the noise variance of the discarded
/// components, alternated with refilling the missing cells.
BaselineFit fit_pca_iterative(const PanelMatrix& panel, const Mask& mask, const LowRankOptions& options);

/// EM with an unregularized rank-r truncated SVD M-step.
BaselineFit fit_svd_em(const PanelMatrix& panel, const Mask& mask, const LowRankOptions& options);

/// Rank with the smallest held-out error over trailing-block folds of the
/// fully observed rows. `method` must be pca or svd.
Index select_rank_cv(const PanelMatrix& panel, const Mask& mask, Method method, Index max_rank, int n_folds,
                     std::uint64_t seed);

// ---------------------------------------------------------------------------
// Synthetic control

struct SimplexOptions {
  double step_size = 0.05;
  int max_iter = 5000;
  double tol = 1e-10;  // absolute objective change
};

struct SimplexFit {
  Eigen::VectorXd weights;
  std::vector<double> objective_trace;  // after every iteration
  double max_simplex_error = 0.0;       // worst |sum w - 1| or negative weight seen
  bool monotone = true;
  bool converged = false;
};

/// Minimizes (1/n) ||target - donors * w||^2 over the probability simplex
/// with exponentiated-gradient updates from uniform weights.
SimplexFit exponentiated_gradient(const Eigen::MatrixXd& donors, const Eigen::VectorXd& target,
                                  const SimplexOptions& options = {});

struct SynthControlOptions {
  SimplexOptions solver;
  bool match_covariates = false;
  bool fit_all_periods = false;  // weights fit on every period, not just the pre-period
};

BaselineFit fit_synth_control(const PanelMatrix& panel, const Mask& mask, const CovariateSet& covariates,
                              const SynthControlOptions& options = {});

// ---------------------------------------------------------------------------
// Continuous-intensity difference in differences

struct DidContinuousOptions {
  int bootstrap = 1000;
  std::uint64_t seed = 0;
  double level = 0.95;
  bool normal_interval = false;  // phi +/- z * bootstrap SE instead of percentiles
};

struct DidContinuousFit {
  double phi = 0.0;  // coefficient on mask * intensity
  double psi = 0.0;  // coefficient on mask
  Eigen::VectorXd covariate_coef;
  Eigen::VectorXd unit_effects;
  Eigen::VectorXd time_effects;
  double ci_low = 0.0;
  double ci_high = 0.0;
  double bootstrap_se = 0.0;
  int bootstrap_used = 0;
  Index n_obs = 0;
  double r2 = 0.0;
  double adj_r2 = 0.0;
};

/// Least squares of Y on unit effects, time effects, M, M*H and unit-time
/// covariates over the complete panel, with a bootstrap that resamples
/// whole units within the treated and control strata.
DidContinuousFit fit_did_continuous(const PanelMatrix& panel, const Mask& mask, const Eigen::MatrixXd& intensity,
                                    const CovariateSet& covariates, const DidContinuousOptions& options = {});

nlohmann::json to_json(const DidContinuousFit& fit);

}  // namespace panelcf
