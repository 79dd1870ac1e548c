#include "panelcf/mcnnm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "panelcf/parallel.hpp"
#include "cv_folds.hpp"
#include "two_way.hpp"

namespace panelcf {
namespace {

struct EffectsSplit {
  Eigen::VectorXd unit_effects;
  Eigen::VectorXd time_effects;
  Eigen::VectorXd beta;
  Eigen::MatrixXd covariate_part;
  Eigen::MatrixXd additive;  // everything except L
};

// Unit covariates are constant over time and therefore span a subspace of
// the unit effects. The additive fit is computed with free unit effects;
// beta is the regression of those effects on X and gamma keeps the rest.
EffectsSplit fit_effects(const detail::TwoWaySolver& solver, const Eigen::MatrixXd& target,
                         const Eigen::MatrixXd& x) {
  EffectsSplit out;
  Eigen::VectorXd unit_total;
  solver.solve(target, unit_total, out.time_effects);
  const Index n = target.rows();
  const Index t_count = target.cols();
  if (x.cols() > 0) {
    const Eigen::VectorXd centered = unit_total.array() - unit_total.mean();
    out.beta = x.colPivHouseholderQr().solve(centered);
    const Eigen::VectorXd xb = x * out.beta;
    out.unit_effects = unit_total - xb;
    out.covariate_part = xb * Eigen::RowVectorXd::Ones(t_count);
  } else {
    out.beta.resize(0);
    out.unit_effects = unit_total;
    out.covariate_part = Eigen::MatrixXd::Zero(n, t_count);
  }
  out.additive = detail::two_way_fitted(unit_total, out.time_effects);
  return out;
}

void check_inputs(const PanelMatrix& panel, const Mask& mask, const CovariateSet& covariates) {
  if (mask.rows() != panel.n_units() || mask.cols() != panel.n_periods()) {
    throw Error("mask shape does not match the panel");
  }
  if (covariates.unit.cols() > 0 && covariates.unit.rows() != panel.n_units()) {
    throw Error("covariate rows do not match the panel");
  }
  const Eigen::ArrayXXd& y = panel.values().array();
  for (Index i = 0; i < y.rows(); ++i) {
    for (Index t = 0; t < y.cols(); ++t) {
      if (!mask.is_missing(i, t) && !std::isfinite(y(i, t))) {
        throw Error("observed cell (" + panel.unit_ids()[static_cast<std::size_t>(i)] + ", " +
                    std::to_string(panel.time_ids()[static_cast<std::size_t>(t)]) + ") is not finite");
      }
    }
  }
}

// Missing cells of y replaced by zero so that NaN never propagates.
Eigen::MatrixXd observed_values(const Eigen::MatrixXd& y, const BoolArray& observed) {
  return observed.select(y.array(), 0.0).matrix();
}

}  // namespace

double mcnnm_objective(const Eigen::MatrixXd& y, const BoolArray& observed, const Eigen::MatrixXd& prediction,
                       const Eigen::MatrixXd& low_rank, double lambda) {
  const Index n_obs = observed.count();
  const double sse = observed.select((y - prediction).array().square(), 0.0).sum();
  double nuclear = 0.0;
  if (lambda != 0.0) {
    Eigen::BDCSVD<Eigen::MatrixXd> svd(low_rank);
    nuclear = svd.singularValues().sum();
  }
  return sse / static_cast<double>(n_obs) + lambda * nuclear;
}

SoftThreshold soft_threshold(const Eigen::MatrixXd& z, double threshold) {
  Eigen::BDCSVD<Eigen::MatrixXd> svd(z, Eigen::ComputeThinU | Eigen::ComputeThinV);
  Eigen::VectorXd s = (svd.singularValues().array() - threshold).cwiseMax(0.0).matrix();
  SoftThreshold out;
  out.matrix = svd.matrixU() * s.asDiagonal() * svd.matrixV().transpose();
  out.singular_values = std::move(s);
  return out;
}

SoftThreshold soft_impute_step(const Eigen::MatrixXd& residual, const BoolArray& observed,
                               const Eigen::MatrixXd& current, double lambda) {
  const Eigen::MatrixXd filled = observed.select(residual.array(), current.array()).matrix();
  const double threshold = lambda * static_cast<double>(observed.count()) / 2.0;
  return soft_threshold(filled, threshold);
}

McnnmFit fit_mcnnm(const PanelMatrix& panel, const Mask& mask, const CovariateSet& covariates,
                   const SolverOptions& options, const Eigen::MatrixXd* warm_start) {
  check_inputs(panel, mask, covariates);
  if (!(options.lambda >= 0.0)) throw Error("lambda must be nonnegative");
  if (!(options.tol > 0.0)) throw Error("tol must be positive");
  if (options.max_iter < 1) throw Error("max_iter must be at least 1");

  const BoolArray observed = mask.observed();
  const detail::TwoWaySolver solver(observed);
  const Eigen::MatrixXd y = observed_values(panel.values(), observed);
  const Eigen::MatrixXd x = covariates.unit.cols() > 0 ? covariates.unit : Eigen::MatrixXd(panel.n_units(), 0);

  Eigen::MatrixXd low_rank = Eigen::MatrixXd::Zero(panel.n_units(), panel.n_periods());
  if (warm_start != nullptr) {
    if (warm_start->rows() != low_rank.rows() || warm_start->cols() != low_rank.cols()) {
      throw Error("warm start has the wrong shape");
    }
    low_rank = *warm_start;
  }

  McnnmFit fit;
  fit.lambda = options.lambda;
  EffectsSplit effects;
  Eigen::VectorXd singular;
  const double n_obs = static_cast<double>(observed.count());
  for (int iter = 0; iter < options.max_iter; ++iter) {
    effects = fit_effects(solver, y - low_rank, x);
    const Eigen::MatrixXd residual = y - effects.additive;
    SoftThreshold step = soft_impute_step(residual, observed, low_rank, options.lambda);
    low_rank = std::move(step.matrix);
    singular = std::move(step.singular_values);

    const double sse = observed.select((residual - low_rank).array().square(), 0.0).sum();
    const double objective = sse / n_obs + options.lambda * singular.sum();
    fit.objective_trace.push_back(objective);
    fit.iterations = iter + 1;
    if (iter > 0) {
      const double prev = fit.objective_trace[fit.objective_trace.size() - 2];
      if (std::abs(prev - objective) <= options.tol * std::abs(prev)) {
        fit.converged = true;
        break;
      }
    }
  }

  fit.low_rank = std::move(low_rank);
  fit.beta = std::move(effects.beta);
  fit.unit_effects = std::move(effects.unit_effects);
  fit.time_effects = std::move(effects.time_effects);
  fit.covariate_part = std::move(effects.covariate_part);
  fit.y_hat = fit.low_rank + effects.additive;
  fit.singular_values = std::move(singular);
  fit.rank = static_cast<Index>((fit.singular_values.array() > 0.0).count());
  fit.residuals = observed.select((panel.values() - fit.y_hat).array(),
                                  std::numeric_limits<double>::quiet_NaN())
                      .matrix();
  return fit;
}

double lambda_max(const PanelMatrix& panel, const Mask& mask, const CovariateSet& covariates) {
  check_inputs(panel, mask, covariates);
  const BoolArray observed = mask.observed();
  const detail::TwoWaySolver solver(observed);
  const Eigen::MatrixXd y = observed_values(panel.values(), observed);
  const Eigen::MatrixXd x = covariates.unit.cols() > 0 ? covariates.unit : Eigen::MatrixXd(panel.n_units(), 0);
  const EffectsSplit effects = fit_effects(solver, y, x);
  const Eigen::MatrixXd centered = observed.select((y - effects.additive).array(), 0.0).matrix();
  Eigen::BDCSVD<Eigen::MatrixXd> svd(centered);
  const double top = svd.singularValues().size() > 0 ? svd.singularValues()(0) : 0.0;
  return 2.0 * top / static_cast<double>(observed.count());
}

std::vector<double> lambda_grid(double max, std::size_t count, double min_ratio) {
  if (!(max > 0.0)) throw Error("lambda grid needs a positive maximum");
  if (count == 0) throw Error("lambda grid must be nonempty");
  std::vector<double> grid(count);
  if (count == 1) {
    grid[0] = max;
    return grid;
  }
  const double log_hi = std::log(max);
  const double log_lo = std::log(max * min_ratio);
  for (std::size_t k = 0; k < count; ++k) {
    const double frac = static_cast<double>(k) / static_cast<double>(count - 1);
    grid[k] = std::exp(log_hi + frac * (log_lo - log_hi));
  }
  grid.front() = max;
  return grid;
}

CvResult cross_validate_lambda(const PanelMatrix& panel, const Mask& mask, const CovariateSet& covariates,
                               const CvConfig& config) {
  check_inputs(panel, mask, covariates);
  if (config.n_folds < 2) throw Error("cross-validation needs at least 2 folds");

  CvResult result;
  result.grid = config.lambda_grid;
  if (result.grid.empty()) {
    double top = lambda_max(panel, mask, covariates);
    if (!(top > 0.0)) top = 1e-8;
    result.grid = lambda_grid(top);
  }
  for (std::size_t k = 1; k < result.grid.size(); ++k) {
    if (!(result.grid[k] < result.grid[k - 1])) throw Error("lambda grid must be strictly decreasing");
  }
  if (!(result.grid.back() >= 0.0)) throw Error("lambda grid values must be nonnegative");
  result.mean_error.assign(result.grid.size(), 0.0);
  if (result.grid.size() == 1) {
    result.lambda_star = result.grid.front();
    return result;
  }

  const Index n = panel.n_units();
  const Index t_count = panel.n_periods();
  const std::vector<BoolArray> held_out = detail::trailing_block_folds(mask, config.n_folds, config.seed);

  const std::size_t folds = static_cast<std::size_t>(config.n_folds);
  std::vector<std::vector<double>> fold_errors(folds);
  parallel_for(folds, [&](std::size_t k) {
    const BoolArray& held = held_out[k];
    const Mask fold_mask = mask.merged(Mask(held));
    const double n_held = static_cast<double>(held.count());
    std::vector<double> errors;
    errors.reserve(result.grid.size());
    Eigen::MatrixXd warm = Eigen::MatrixXd::Zero(n, t_count);
    for (double lambda : result.grid) {
      const McnnmFit fit = fit_mcnnm(panel, fold_mask, covariates, {lambda, config.max_iter, config.tol}, &warm);
      warm = fit.low_rank;
      const double sse = held.select((panel.values() - fit.y_hat).array().square(), 0.0).sum();
      errors.push_back(sse / n_held);
    }
    fold_errors[k] = std::move(errors);
  });

  for (std::size_t g = 0; g < result.grid.size(); ++g) {
    double total = 0.0;
    for (const auto& e : fold_errors) total += e[g];
    result.mean_error[g] = total / static_cast<double>(folds);
  }
  // grid is decreasing: keeping the first minimum breaks ties toward larger lambda
  std::size_t best = 0;
  for (std::size_t g = 1; g < result.grid.size(); ++g) {
    if (result.mean_error[g] < result.mean_error[best]) best = g;
  }
  result.lambda_star = result.grid[best];
  result.flat = std::all_of(result.mean_error.begin(), result.mean_error.end(),
                            [&](double e) { return e == result.mean_error.front(); });
  return result;
}

McnnmFit fit_mcnnm_cv(const PanelMatrix& panel, const Mask& mask, const CovariateSet& covariates,
                      const CvConfig& config, CvResult* cv_out) {
  CvResult cv = cross_validate_lambda(panel, mask, covariates, config);
  // walk the same warm-started path the folds used, stopping at lambda*
  McnnmFit fit;
  Eigen::MatrixXd warm = Eigen::MatrixXd::Zero(panel.n_units(), panel.n_periods());
  for (double lambda : cv.grid) {
    if (lambda < cv.lambda_star) break;
    fit = fit_mcnnm(panel, mask, covariates, {lambda, config.max_iter, config.tol}, &warm);
    warm = fit.low_rank;
  }
  if (cv_out != nullptr) *cv_out = std::move(cv);
  return fit;
}

std::vector<CellPrediction> predict_counterfactuals(const McnnmFit& fit, const Mask& mask) {
  if (mask.rows() != fit.y_hat.rows() || mask.cols() != fit.y_hat.cols()) {
    throw Error("mask shape does not match the fit");
  }
  std::vector<CellPrediction> out;
  out.reserve(static_cast<std::size_t>(mask.missing_count()));
  for (Index i = 0; i < mask.rows(); ++i) {
    for (Index t = 0; t < mask.cols(); ++t) {
      if (mask.is_missing(i, t)) out.push_back({i, t, fit.y_hat(i, t)});
    }
  }
  return out;
}

nlohmann::json to_json(const McnnmFit& fit) {
  nlohmann::json j;
  j["lambda"] = fit.lambda;
  j["rank"] = fit.rank;
  j["iterations"] = fit.iterations;
  j["converged"] = fit.converged;
  j["objective_trace"] = fit.objective_trace;
  j["beta"] = std::vector<double>(fit.beta.data(), fit.beta.data() + fit.beta.size());
  j["singular_values"] =
      std::vector<double>(fit.singular_values.data(), fit.singular_values.data() + fit.singular_values.size());
  return j;
}

nlohmann::json to_json(const CvResult& cv) {
  return {{"lambda_star", cv.lambda_star}, {"grid", cv.grid}, {"mean_error", cv.mean_error}, {"flat", cv.flat}};
}

}  // namespace panelcf
