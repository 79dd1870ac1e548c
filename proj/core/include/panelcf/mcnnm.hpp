#pragma once

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <cstdint>
#include <optional>
#include <vector>

#include "panelcf/panel.hpp"

namespace panelcf {

struct SolverOptions {
  double lambda = 0.0;
  int max_iter = 500;
  double tol = 1e-6;
};

/// Fitted matrix-completion model
///   Y = L + X beta + gamma 1' + 1 delta' + eps
/// with L penalized by its nuclear norm.
struct McnnmFit {
  Eigen::MatrixXd low_rank;       // L
  Eigen::VectorXd beta;           // P covariate coefficients
  Eigen::VectorXd unit_effects;   // gamma
  Eigen::VectorXd time_effects;   // delta
  Eigen::MatrixXd covariate_part; // X beta broadcast over columns
  Eigen::MatrixXd residuals;      // observed cells; NaN where missing
  Eigen::MatrixXd y_hat;          // complete prediction
  Eigen::VectorXd singular_values;
  double lambda = 0.0;
  Index rank = 0;
  int iterations = 0;
  bool converged = false;
  std::vector<double> objective_trace;
};

/// Penalized least-squares objective over observed cells:
///   (1/|O|) sum_O (Y - L - Xb - g - d)^2 + lambda * ||L||_*
double mcnnm_objective(const Eigen::MatrixXd& y, const BoolArray& observed, const Eigen::MatrixXd& prediction,
                       const Eigen::MatrixXd& low_rank, double lambda);

struct SoftThreshold {
  Eigen::MatrixXd matrix;
  Eigen::VectorXd singular_values;  // after shrinkage
};

/// SVD of `z` with singular values s replaced by max(s - threshold, 0).
SoftThreshold soft_threshold(const Eigen::MatrixXd& z, double threshold);

/// One low-rank update: observed cells of `residual` are kept, missing
/// cells are filled from `current`, and the result is soft-thresholded
/// at lambda * |O| / 2.
SoftThreshold soft_impute_step(const Eigen::MatrixXd& residual, const BoolArray& observed,
                               const Eigen::MatrixXd& current, double lambda);

McnnmFit fit_mcnnm(const PanelMatrix& panel, const Mask& mask, const CovariateSet& covariates,
                   const SolverOptions& options, const Eigen::MatrixXd* warm_start = nullptr);

/// Smallest lambda at which the fitted low-rank component is exactly zero.
double lambda_max(const PanelMatrix& panel, const Mask& mask, const CovariateSet& covariates);

/// `count` log-spaced values from `max` down to max * min_ratio.
std::vector<double> lambda_grid(double max, std::size_t count = 20, double min_ratio = 1e-4);

struct CvConfig {
  std::vector<double> lambda_grid;  // decreasing; empty selects the default grid
  int n_folds = 5;
  int max_iter = 500;
  double tol = 1e-6;
  std::uint64_t seed = 0;
};

struct CvResult {
  double lambda_star = 0.0;
  std::vector<double> grid;
  std::vector<double> mean_error;  // per grid value
  bool flat = false;               // every grid value produced the same error
};

/// Chooses lambda by masking trailing blocks of control rows, shaped like
/// the treated missingness, and scoring the held-out squared error.
CvResult cross_validate_lambda(const PanelMatrix& panel, const Mask& mask, const CovariateSet& covariates,
                               const CvConfig& config);

/// Cross-validates lambda, then refits on all observed cells.
McnnmFit fit_mcnnm_cv(const PanelMatrix& panel, const Mask& mask, const CovariateSet& covariates,
                      const CvConfig& config, CvResult* cv_out = nullptr);

struct CellPrediction {
  Index unit = 0;
  Index period = 0;
  double value = 0.0;
};

/// Fitted values at the missing cells of `mask`, row-major.
std::vector<CellPrediction> predict_counterfactuals(const McnnmFit& fit, const Mask& mask);

nlohmann::json to_json(const McnnmFit& fit);
nlohmann::json to_json(const CvResult& cv);

}  // namespace panelcf
