#include <algorithm>
#include <cmath>

#include "panelcf/baseline.hpp"

namespace panelcf {

SimplexFit exponentiated_gradient(const Eigen::MatrixXd& donors, const Eigen::VectorXd& target,
                                  const SimplexOptions& options) {
  if (donors.rows() != target.size()) throw Error("synthetic control: donor and target lengths differ");
  if (donors.cols() < 1) throw Error("synthetic control: no donors");
  if (!(options.step_size > 0.0)) throw Error("synthetic control: step size must be positive");
  const double n = static_cast<double>(donors.rows());
  const Index j_count = donors.cols();

  SimplexFit out;
  Eigen::VectorXd w = Eigen::VectorXd::Constant(j_count, 1.0 / static_cast<double>(j_count));
  Eigen::VectorXd resid = target - donors * w;
  double objective = resid.squaredNorm() / n;
  for (int iter = 0; iter < options.max_iter; ++iter) {
    const Eigen::VectorXd grad = -(2.0 / n) * (donors.transpose() * resid);
    // shift by the minimum gradient so the largest factor is exp(0)
    const Eigen::ArrayXd factor = (-options.step_size * (grad.array() - grad.minCoeff())).exp();
    w = (w.array() * factor).matrix();
    w /= w.sum();

    const double simplex_error = std::max(std::abs(w.sum() - 1.0), std::max(0.0, -w.minCoeff()));
    out.max_simplex_error = std::max(out.max_simplex_error, simplex_error);

    resid = target - donors * w;
    const double next = resid.squaredNorm() / n;
    out.objective_trace.push_back(next);
    if (!std::isfinite(next)) {
      out.monotone = false;
      break;
    }
    if (next > objective * (1.0 + 1e-12) + 1e-300) out.monotone = false;
    const double change = std::abs(objective - next);
    objective = next;
    if (change < options.tol) {
      out.converged = true;
      break;
    }
  }
  out.weights = std::move(w);
  return out;
}

BaselineFit fit_synth_control(const PanelMatrix& panel, const Mask& mask, const CovariateSet& covariates,
                              const SynthControlOptions& options) {
  if (mask.rows() != panel.n_units() || mask.cols() != panel.n_periods()) {
    throw Error("mask shape does not match the panel");
  }
  const Eigen::MatrixXd& y = panel.values();
  std::vector<Index> controls;
  std::vector<Index> treated;
  for (Index i = 0; i < panel.n_units(); ++i) {
    (mask.missing().row(i).any() ? treated : controls).push_back(i);
  }
  if (controls.size() < 2) throw Error("synthetic control needs at least 2 control units");
  const bool with_covariates = options.match_covariates && covariates.unit.cols() > 0;
  if (with_covariates && covariates.unit.rows() != panel.n_units()) {
    throw Error("covariate rows do not match the panel");
  }

  BaselineFit fit;
  fit.method = Method::sc_adh;
  fit.y_hat = y;
  nlohmann::json units = nlohmann::json::array();
  bool diverged = false;
  for (Index i : treated) {
    std::vector<Index> pre;
    for (Index t = 0; t < panel.n_periods(); ++t) {
      if (options.fit_all_periods || !mask.is_missing(i, t)) pre.push_back(t);
    }
    if (pre.empty()) {
      throw Error("synthetic control: unit '" + panel.unit_ids()[static_cast<std::size_t>(i)] +
                  "' has no pre-period");
    }
    const Index extra = with_covariates ? covariates.unit.cols() : 0;
    const Index rows = static_cast<Index>(pre.size()) + extra;
    Eigen::MatrixXd donors(rows, static_cast<Index>(controls.size()));
    Eigen::VectorXd target(rows);
    donors.topRows(static_cast<Index>(pre.size())) = y(controls, pre).transpose();
    target.head(static_cast<Index>(pre.size())) = y.row(i)(pre).transpose();
    if (with_covariates) {
      donors.bottomRows(extra) = covariates.unit(controls, Eigen::all).transpose();
      target.tail(extra) = covariates.unit.row(i).transpose();
    }
    const SimplexFit sf = exponentiated_gradient(donors, target, options.solver);
    fit.y_hat.row(i) = sf.weights.transpose() * y(controls, Eigen::all);
    diverged = diverged || !sf.monotone;
    units.push_back({{"unit", panel.unit_ids()[static_cast<std::size_t>(i)]},
                     {"weights", std::vector<double>(sf.weights.data(), sf.weights.data() + sf.weights.size())},
                     {"objective", sf.objective_trace.empty() ? 0.0 : sf.objective_trace.back()},
                     {"iterations", sf.objective_trace.size()},
                     {"monotone", sf.monotone},
                     {"converged", sf.converged},
                     {"max_simplex_error", sf.max_simplex_error}});
  }
  fit.diagnostics["units"] = std::move(units);
  fit.diagnostics["diverged"] = diverged;
  return fit;
}

}  // namespace panelcf
