#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <set>

#include "panelcf/baseline.hpp"
#include "panelcf/parallel.hpp"

namespace panelcf {
namespace {

struct Standardized {
  Eigen::MatrixXd x;   // centered, unit population sd; constant columns zeroed
  Eigen::VectorXd mean;
  Eigen::VectorXd scale;  // 0 for constant columns
  double y_mean = 0.0;
  Eigen::VectorXd y;   // centered
};

Standardized standardize(const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
  Standardized s;
  const double n = static_cast<double>(x.rows());
  s.mean = x.colwise().mean().transpose();
  s.x = x.rowwise() - s.mean.transpose();
  s.scale.resize(x.cols());
  for (Index j = 0; j < x.cols(); ++j) {
    const double sd = std::sqrt(s.x.col(j).squaredNorm() / n);
    const double magnitude = std::max(1.0, s.mean(j) == 0.0 ? 0.0 : std::abs(s.mean(j)));
    if (sd > 1e-12 * magnitude) {
      s.scale(j) = sd;
      s.x.col(j) /= sd;
    } else {
      s.scale(j) = 0.0;
      s.x.col(j).setZero();
    }
  }
  s.y_mean = y.mean();
  s.y = y.array() - s.y_mean;
  return s;
}

double soft(double z, double gamma) {
  if (z > gamma) return z - gamma;
  if (z < -gamma) return z + gamma;
  return 0.0;
}

// Coordinate descent on standardized data; returns standardized coefficients.
Eigen::VectorXd descend(const Standardized& s, double penalty, double mix, const ElasticNetOptions& options,
                        Eigen::VectorXd beta, int& sweeps, bool& converged) {
  const double n = static_cast<double>(s.x.rows());
  Eigen::VectorXd resid = s.y - s.x * beta;
  const double l1 = penalty * mix;
  const double denom = 1.0 + penalty * (1.0 - mix);
  // glmnet-style stop: largest squared coefficient move relative to var(y)
  const double scale = std::max(s.y.squaredNorm() / n, std::numeric_limits<double>::min());
  converged = false;
  sweeps = 0;
  while (sweeps < options.max_sweeps) {
    ++sweeps;
    double max_change = 0.0;
    for (Index j = 0; j < s.x.cols(); ++j) {
      if (s.scale(j) == 0.0) continue;
      const double old = beta(j);
      const double z = s.x.col(j).dot(resid) / n + old;
      const double updated = soft(z, l1) / denom;
      if (updated != old) {
        resid -= (updated - old) * s.x.col(j);
        beta(j) = updated;
        max_change = std::max(max_change, (updated - old) * (updated - old));
      }
    }
    if (max_change <= options.tol * scale) {
      converged = true;
      break;
    }
  }
  return beta;
}

ElasticNetModel unstandardize(const Standardized& s, const Eigen::VectorXd& beta, double penalty, double mix) {
  ElasticNetModel m;
  m.penalty = penalty;
  m.mix = mix;
  m.coef = Eigen::VectorXd::Zero(beta.size());
  for (Index j = 0; j < beta.size(); ++j) {
    if (s.scale(j) > 0.0) m.coef(j) = beta(j) / s.scale(j);
  }
  m.intercept = s.y_mean - m.coef.dot(s.mean);
  return m;
}

double path_max(const Standardized& s, double mix) {
  const double n = static_cast<double>(s.x.rows());
  const double top = (s.x.transpose() * s.y).cwiseAbs().maxCoeff() / n;
  return top / std::max(mix, 1e-3);
}

std::vector<double> penalty_path(double top, std::size_t length, double min_ratio) {
  std::vector<double> path(length);
  if (length == 1) {
    path[0] = top;
    return path;
  }
  for (std::size_t k = 0; k < length; ++k) {
    const double frac = static_cast<double>(k) / static_cast<double>(length - 1);
    path[k] = top * std::pow(min_ratio, frac);
  }
  return path;
}

}  // namespace

ElasticNetModel elastic_net(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double penalty, double mix,
                            const ElasticNetOptions& options, const ElasticNetModel* warm) {
  if (x.rows() != y.size()) throw Error("elastic net: predictor and response sizes differ");
  if (x.rows() < 1) throw Error("elastic net: no observations");
  if (!(penalty >= 0.0)) throw Error("elastic net: penalty must be nonnegative");
  if (!(mix >= 0.0 && mix <= 1.0)) throw Error("elastic net: mix must lie in [0, 1]");
  const Standardized s = standardize(x, y);
  if (std::isinf(penalty) || x.cols() == 0) {
    ElasticNetModel m = unstandardize(s, Eigen::VectorXd::Zero(x.cols()), penalty, mix);
    m.converged = true;
    return m;
  }
  Eigen::VectorXd start = Eigen::VectorXd::Zero(x.cols());
  if (warm != nullptr && warm->coef.size() == x.cols()) start = warm->coef.cwiseProduct(s.scale);
  int sweeps = 0;
  bool converged = false;
  const Eigen::VectorXd beta = descend(s, penalty, mix, options, start, sweeps, converged);
  ElasticNetModel m = unstandardize(s, beta, penalty, mix);
  m.sweeps = sweeps;
  m.converged = converged;
  return m;
}

ElasticNetModel elastic_net_cv(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                               const std::vector<int>& fold_of_row, const ElasticNetConfig& config) {
  if (x.rows() != y.size() || static_cast<Index>(fold_of_row.size()) != x.rows()) {
    throw Error("elastic net CV: inconsistent sizes");
  }
  if (config.mixes.empty()) throw Error("elastic net CV: no mixing values");
  const std::set<int> labels(fold_of_row.begin(), fold_of_row.end());
  const Standardized full = standardize(x, y);
  const bool informative = x.cols() > 0 && (full.scale.array() > 0.0).any() && full.y.squaredNorm() > 0.0;
  if (labels.size() < 2 || !informative) {
    return elastic_net(x, y, std::numeric_limits<double>::infinity(), config.mixes.front(), config.solver);
  }

  double best_error = std::numeric_limits<double>::infinity();
  double best_penalty = std::numeric_limits<double>::infinity();
  double best_mix = config.mixes.front();
  for (double mix : config.mixes) {
    const std::vector<double> path = penalty_path(path_max(full, mix), config.path_length, config.min_ratio);
    std::vector<double> error(path.size(), 0.0);
    for (int label : labels) {
      std::vector<Index> train;
      std::vector<Index> test;
      for (Index r = 0; r < x.rows(); ++r) {
        (fold_of_row[static_cast<std::size_t>(r)] == label ? test : train).push_back(r);
      }
      if (train.empty() || test.empty()) continue;
      const Eigen::MatrixXd x_train = x(train, Eigen::all);
      const Eigen::VectorXd y_train = y(train);
      const Eigen::MatrixXd x_test = x(test, Eigen::all);
      const Eigen::VectorXd y_test = y(test);
      ElasticNetModel warm;
      for (std::size_t k = 0; k < path.size(); ++k) {
        warm = elastic_net(x_train, y_train, path[k], mix, config.solver, k == 0 ? nullptr : &warm);
        const Eigen::VectorXd pred = (x_test * warm.coef).array() + warm.intercept;
        error[k] += (y_test - pred).squaredNorm();
      }
    }
    // path is decreasing in penalty; strict improvement keeps the larger penalty on ties
    for (std::size_t k = 0; k < path.size(); ++k) {
      if (error[k] < best_error * (1.0 - 1e-12)) {
        best_error = error[k];
        best_penalty = path[k];
        best_mix = mix;
      }
    }
  }
  return elastic_net(x, y, best_penalty, best_mix, config.solver);
}

namespace {

ElasticNetModel fit_one(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, std::vector<int> folds,
                        const ElasticNetConfig& config) {
  if (x.rows() < 1) throw Error("elastic net: fewer than one observation after masking");
  if (config.penalty) return elastic_net(x, y, *config.penalty, config.mix.value_or(0.5), config.solver);
  return elastic_net_cv(x, y, folds, config);
}

// contiguous blocks in time order
std::vector<int> block_folds(Index n, int n_folds) {
  const int k = static_cast<int>(std::min<Index>(n_folds, n));
  std::vector<int> folds(static_cast<std::size_t>(n));
  for (Index r = 0; r < n; ++r) folds[static_cast<std::size_t>(r)] = static_cast<int>(r * k / n);
  return folds;
}

std::vector<int> random_folds(Index n, int n_folds, std::uint64_t seed) {
  const int k = static_cast<int>(std::min<Index>(n_folds, n));
  std::vector<int> folds(static_cast<std::size_t>(n));
  for (Index r = 0; r < n; ++r) folds[static_cast<std::size_t>(r)] = static_cast<int>(r % k);
  std::mt19937_64 rng(seed);
  std::shuffle(folds.begin(), folds.end(), rng);
  return folds;
}

}  // namespace

BaselineFit fit_elastic_net(const PanelMatrix& panel, const Mask& mask, Orientation orientation,
                            const ElasticNetConfig& config) {
  if (mask.rows() != panel.n_units() || mask.cols() != panel.n_periods()) {
    throw Error("mask shape does not match the panel");
  }
  const Eigen::MatrixXd& y = panel.values();
  const Index t_count = panel.n_periods();
  std::vector<Index> controls;
  std::vector<Index> treated;
  for (Index i = 0; i < panel.n_units(); ++i) {
    (mask.missing().row(i).any() ? treated : controls).push_back(i);
  }

  BaselineFit fit;
  fit.y_hat = y;
  nlohmann::json units = nlohmann::json::array();

  if (orientation == Orientation::vertical) {
    fit.method = Method::vt_en;
    if (controls.empty()) throw Error("vertical regression needs at least one control unit");
    const Eigen::MatrixXd donors = y(controls, Eigen::all).transpose();  // T x J
    for (Index i : treated) {
      std::vector<Index> rows;
      for (Index t = 0; t < t_count; ++t) {
        if (config.fit_all_periods || !mask.is_missing(i, t)) rows.push_back(t);
      }
      if (rows.size() < 2) {
        throw Error("vertical regression: unit '" + panel.unit_ids()[static_cast<std::size_t>(i)] +
                    "' has fewer than 2 pre-periods");
      }
      const Eigen::MatrixXd x = donors(rows, Eigen::all);
      const Eigen::VectorXd target = y.row(i)(rows).transpose();
      const ElasticNetModel m = fit_one(x, target, block_folds(x.rows(), config.n_folds), config);
      fit.y_hat.row(i) = ((donors * m.coef).array() + m.intercept).transpose();
      units.push_back({{"unit", panel.unit_ids()[static_cast<std::size_t>(i)]},
                       {"penalty", m.penalty},
                       {"mix", m.mix},
                       {"intercept", m.intercept},
                       {"nonzero", (m.coef.array() != 0.0).count()}});
    }
  } else {
    fit.method = Method::hr_en;
    if (config.fit_all_periods) throw Error("horizontal regression has no in-sample fit for pre-period cells");
    if (controls.size() < 2) throw Error("horizontal regression needs at least 2 control units");
    // treated units sharing an adoption column share the regressions
    std::map<Index, std::vector<Index>> groups;
    for (Index i : treated) {
      Index first_missing = 0;
      while (!mask.is_missing(i, first_missing)) ++first_missing;
      if (first_missing == 0) {
        throw Error("horizontal regression: unit '" + panel.unit_ids()[static_cast<std::size_t>(i)] +
                    "' has no pre-period");
      }
      groups[first_missing].push_back(i);
    }
    const Index j_count = static_cast<Index>(controls.size());
    const std::vector<int> folds = random_folds(j_count, config.n_folds, config.seed);
    for (const auto& [first_missing, members] : groups) {
      const Eigen::MatrixXd x = y(controls, Eigen::seqN(0, first_missing));
      for (Index t = first_missing; t < t_count; ++t) {
        const Eigen::VectorXd target = y(controls, t);
        const ElasticNetModel m = fit_one(x, target, folds, config);
        for (Index i : members) {
          fit.y_hat(i, t) = m.intercept + y.row(i).head(first_missing).dot(m.coef);
        }
      }
      units.push_back({{"adoption_column", first_missing}, {"units", members.size()}});
    }
  }
  fit.diagnostics["fits"] = std::move(units);
  return fit;
}

}  // namespace panelcf
