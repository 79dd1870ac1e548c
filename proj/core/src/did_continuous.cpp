#include <algorithm>
#include <cmath>
#include <random>

#include <boost/math/distributions/normal.hpp>

#include "panelcf/baseline.hpp"
#include "panelcf/parallel.hpp"

namespace panelcf {
namespace {

Eigen::MatrixXd demean_two_way(const Eigen::MatrixXd& z) {
  const Eigen::VectorXd row_mean = z.rowwise().mean();
  const Eigen::RowVectorXd col_mean = z.colwise().mean();
  const double grand = z.mean();
  Eigen::MatrixXd out = z;
  out.colwise() -= row_mean;
  out.rowwise() -= col_mean;
  out.array() += grand;
  return out;
}

struct Regression {
  Eigen::VectorXd coef;  // [psi, phi, covariates...]
  double ssr = 0.0;
  double sst = 0.0;
};

// Within estimator for a balanced panel; rows of the inputs are units.
Regression within_regression(const Eigen::MatrixXd& y, const std::vector<Eigen::MatrixXd>& regressors) {
  const Index n_obs = y.size();
  const Index k = static_cast<Index>(regressors.size());
  Eigen::MatrixXd design(n_obs, k);
  for (Index c = 0; c < k; ++c) {
    const Eigen::MatrixXd d = demean_two_way(regressors[static_cast<std::size_t>(c)]);
    design.col(c) = Eigen::Map<const Eigen::VectorXd>(d.data(), n_obs);
  }
  const Eigen::MatrixXd yd = demean_two_way(y);
  const Eigen::Map<const Eigen::VectorXd> target(yd.data(), n_obs);

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
  const double scale = std::max(1.0, design.cwiseAbs().maxCoeff());
  qr.setThreshold(1e-10 * scale);
  if (qr.rank() < k) {
    throw Error("collinear regressors: the intensity interaction is not separable from the treatment indicator");
  }
  Regression out;
  out.coef = qr.solve(target);
  out.ssr = (target - design * out.coef).squaredNorm();
  out.sst = (y.array() - y.mean()).square().sum();
  return out;
}

double percentile(std::vector<double> values, double p) {
  std::sort(values.begin(), values.end());
  const double pos = p * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

}  // namespace

DidContinuousFit fit_did_continuous(const PanelMatrix& panel, const Mask& mask, const Eigen::MatrixXd& intensity,
                                    const CovariateSet& covariates, const DidContinuousOptions& options) {
  const Index n = panel.n_units();
  const Index t_count = panel.n_periods();
  if (mask.rows() != n || mask.cols() != t_count) throw Error("mask shape does not match the panel");
  if (intensity.rows() != n || intensity.cols() != t_count) throw Error("intensity shape does not match the panel");
  if (!panel.values().allFinite()) throw Error("continuous DID needs a complete panel");
  if (!(options.level > 0.0 && options.level < 1.0)) throw Error("confidence level must lie in (0, 1)");
  if (options.bootstrap < 2) throw Error("continuous DID needs at least 2 bootstrap replicates");

  const Eigen::MatrixXd m = mask.missing().cast<double>().matrix();
  Eigen::MatrixXd mh = Eigen::MatrixXd::Zero(n, t_count);
  for (Index i = 0; i < n; ++i) {
    for (Index t = 0; t < t_count; ++t) {
      if (!mask.is_missing(i, t)) continue;
      if (!std::isfinite(intensity(i, t))) {
        throw Error("intensity missing for unit '" + panel.unit_ids()[static_cast<std::size_t>(i)] +
                    "' at time " + std::to_string(panel.time_ids()[static_cast<std::size_t>(t)]));
      }
      mh(i, t) = intensity(i, t);
    }
  }
  std::vector<Eigen::MatrixXd> regressors{m, mh};
  for (const auto& x : covariates.unit_time) {
    if (x.rows() != n || x.cols() != t_count) throw Error("unit-time covariate shape does not match the panel");
    if (!x.allFinite()) throw Error("unit-time covariates must be complete");
    regressors.push_back(x);
  }

  const Eigen::MatrixXd& y = panel.values();
  const Regression full = within_regression(y, regressors);

  DidContinuousFit fit;
  fit.psi = full.coef(0);
  fit.phi = full.coef(1);
  fit.covariate_coef = full.coef.tail(full.coef.size() - 2);
  fit.n_obs = n * t_count;
  {
    Eigen::MatrixXd resid_target = y;
    for (std::size_t c = 0; c < regressors.size(); ++c) {
      resid_target -= full.coef(static_cast<Index>(c)) * regressors[c];
    }
    fit.unit_effects = resid_target.rowwise().mean();
    const double grand = resid_target.mean();
    fit.time_effects = (resid_target.colwise().mean().array() - grand).transpose();
  }
  const double n_obs = static_cast<double>(fit.n_obs);
  const double params = static_cast<double>(n + t_count - 1) + static_cast<double>(regressors.size());
  fit.r2 = full.sst > 0.0 ? 1.0 - full.ssr / full.sst : 1.0;
  fit.adj_r2 = 1.0 - (1.0 - fit.r2) * (n_obs - 1.0) / (n_obs - params);

  // resample whole units within treated and control strata
  std::vector<Index> treated;
  std::vector<Index> controls;
  for (Index i = 0; i < n; ++i) (mask.missing().row(i).any() ? treated : controls).push_back(i);

  const auto replicates = static_cast<std::size_t>(options.bootstrap);
  std::vector<double> draws(replicates, std::numeric_limits<double>::quiet_NaN());
  parallel_for(replicates, [&](std::size_t b) {
    std::mt19937_64 rng(task_seed(options.seed, b));
    std::vector<Index> rows;
    rows.reserve(static_cast<std::size_t>(n));
    for (const auto* stratum : {&controls, &treated}) {
      if (stratum->empty()) continue;
      std::uniform_int_distribution<std::size_t> pick(0, stratum->size() - 1);
      for (std::size_t k = 0; k < stratum->size(); ++k) rows.push_back((*stratum)[pick(rng)]);
    }
    std::vector<Eigen::MatrixXd> sampled;
    sampled.reserve(regressors.size());
    for (const auto& r : regressors) sampled.push_back(r(rows, Eigen::all));
    try {
      draws[b] = within_regression(y(rows, Eigen::all), sampled).coef(1);
    } catch (const Error&) {
      // degenerate resample; dropped from the interval
    }
  });
  std::vector<double> valid;
  for (double d : draws) {
    if (std::isfinite(d)) valid.push_back(d);
  }
  if (valid.size() < 2) throw Error("continuous DID: too few usable bootstrap replicates");
  fit.bootstrap_used = static_cast<int>(valid.size());
  double mean = 0.0;
  for (double d : valid) mean += d;
  mean /= static_cast<double>(valid.size());
  double var = 0.0;
  for (double d : valid) var += (d - mean) * (d - mean);
  fit.bootstrap_se = std::sqrt(var / static_cast<double>(valid.size() - 1));

  if (options.normal_interval) {
    const boost::math::normal_distribution<double> normal;
    const double z = boost::math::quantile(normal, 0.5 + options.level / 2.0);
    fit.ci_low = fit.phi - z * fit.bootstrap_se;
    fit.ci_high = fit.phi + z * fit.bootstrap_se;
  } else {
    const double alpha = 1.0 - options.level;
    fit.ci_low = percentile(valid, alpha / 2.0);
    fit.ci_high = percentile(valid, 1.0 - alpha / 2.0);
    // a percentile interval can miss a skewed point estimate; widen to cover it
    fit.ci_low = std::min(fit.ci_low, fit.phi);
    fit.ci_high = std::max(fit.ci_high, fit.phi);
  }
  return fit;
}

nlohmann::json to_json(const DidContinuousFit& fit) {
  return {{"phi", fit.phi},
          {"psi", fit.psi},
          {"covariate_coef", std::vector<double>(fit.covariate_coef.data(),
                                                 fit.covariate_coef.data() + fit.covariate_coef.size())},
          {"ci_low", fit.ci_low},
          {"ci_high", fit.ci_high},
          {"bootstrap_se", fit.bootstrap_se},
          {"bootstrap_used", fit.bootstrap_used},
          {"n_obs", fit.n_obs},
          {"r2", fit.r2},
          {"adj_r2", fit.adj_r2}};
}

}  // namespace panelcf
