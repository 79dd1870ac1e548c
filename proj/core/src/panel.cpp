#include "panelcf/panel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace panelcf {

PanelMatrix::PanelMatrix(Eigen::MatrixXd values, std::vector<std::string> unit_ids,
                         std::vector<int> time_ids)
    : values_(std::move(values)), unit_ids_(std::move(unit_ids)), time_ids_(std::move(time_ids)) {
  if (values_.rows() < 2 || values_.cols() < 2) {
    throw Error("panel must have at least 2 units and 2 periods");
  }
  if (static_cast<Index>(unit_ids_.size()) != values_.rows() ||
      static_cast<Index>(time_ids_.size()) != values_.cols()) {
    throw Error("panel labels do not match the value matrix shape");
  }
  std::unordered_set<std::string> seen;
  for (const auto& id : unit_ids_) {
    if (!seen.insert(id).second) throw Error("duplicate unit id '" + id + "'");
  }
  for (std::size_t t = 1; t < time_ids_.size(); ++t) {
    if (time_ids_[t] <= time_ids_[t - 1]) {
      throw Error("time ids must be strictly increasing (at " + std::to_string(time_ids_[t]) + ")");
    }
  }
}

PanelMatrix PanelMatrix::from_values(Eigen::MatrixXd values) {
  std::vector<std::string> units(static_cast<std::size_t>(values.rows()));
  for (std::size_t i = 0; i < units.size(); ++i) units[i] = "u" + std::to_string(i);
  std::vector<int> times(static_cast<std::size_t>(values.cols()));
  std::iota(times.begin(), times.end(), 1);
  return PanelMatrix(std::move(values), std::move(units), std::move(times));
}

std::optional<Index> PanelMatrix::unit_index(std::string_view unit) const {
  auto it = std::find(unit_ids_.begin(), unit_ids_.end(), unit);
  if (it == unit_ids_.end()) return std::nullopt;
  return static_cast<Index>(it - unit_ids_.begin());
}

std::optional<Index> PanelMatrix::time_index(int time) const {
  auto it = std::lower_bound(time_ids_.begin(), time_ids_.end(), time);
  if (it == time_ids_.end() || *it != time) return std::nullopt;
  return static_cast<Index>(it - time_ids_.begin());
}

PanelMatrix PanelMatrix::select_units(std::span<const Index> rows) const {
  Eigen::MatrixXd v(static_cast<Index>(rows.size()), n_periods());
  std::vector<std::string> ids;
  ids.reserve(rows.size());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    v.row(static_cast<Index>(k)) = values_.row(rows[k]);
    ids.push_back(unit_ids_.at(static_cast<std::size_t>(rows[k])));
  }
  return PanelMatrix(std::move(v), std::move(ids), time_ids_);
}

PanelMatrix PanelMatrix::select_periods(Index first, Index count) const {
  if (first < 0 || count < 0 || first + count > n_periods()) {
    throw Error("period selection out of range");
  }
  std::vector<int> times(time_ids_.begin() + first, time_ids_.begin() + first + count);
  return PanelMatrix(values_.middleCols(first, count), unit_ids_, std::move(times));
}

PanelMatrix PanelMatrix::with_values(Eigen::MatrixXd values) const {
  return PanelMatrix(std::move(values), unit_ids_, time_ids_);
}

TreatmentPlan::TreatmentPlan(std::vector<std::optional<Index>> last_observed)
    : last_observed_(std::move(last_observed)) {
  for (std::size_t i = 0; i < last_observed_.size(); ++i) {
    if (last_observed_[i]) {
      treated_.push_back(static_cast<Index>(i));
    } else {
      controls_.push_back(static_cast<Index>(i));
    }
  }
  if (treated_.empty()) throw Error("treatment plan has no treated units");
  if (controls_.empty()) throw Error("treatment plan has no control units");
}

TreatmentPlan TreatmentPlan::from_times(const std::vector<std::optional<int>>& adoption_times,
                                        std::span<const int> time_ids) {
  std::vector<std::optional<Index>> idx(adoption_times.size());
  for (std::size_t i = 0; i < adoption_times.size(); ++i) {
    if (!adoption_times[i]) continue;
    auto it = std::find(time_ids.begin(), time_ids.end(), *adoption_times[i]);
    if (it == time_ids.end()) {
      throw Error("adoption time " + std::to_string(*adoption_times[i]) +
                  " is not a panel period");
    }
    idx[i] = static_cast<Index>(it - time_ids.begin());
  }
  return TreatmentPlan(std::move(idx));
}

Index TreatmentPlan::earliest_adoption() const {
  Index best = *last_observed_[static_cast<std::size_t>(treated_.front())];
  for (Index i : treated_) best = std::min(best, *last_observed_[static_cast<std::size_t>(i)]);
  return best;
}

Mask Mask::none(Index n_units, Index n_periods) {
  return Mask(BoolArray::Constant(n_units, n_periods, false));
}

Mask Mask::merged(const Mask& other) const {
  if (other.rows() != rows() || other.cols() != cols()) throw Error("mask shapes differ");
  return Mask(missing_ || other.missing_);
}

Mask build_mask(const TreatmentPlan& plan, Index n_units, Index n_periods) {
  if (plan.n_units() != n_units) {
    throw Error("treatment plan covers " + std::to_string(plan.n_units()) + " units, panel has " +
                std::to_string(n_units));
  }
  BoolArray missing = BoolArray::Constant(n_units, n_periods, false);
  for (Index i : plan.treated_units()) {
    const Index t0 = *plan.last_observed(i);
    if (t0 < 0 || t0 >= n_periods) {
      throw Error("adoption of unit " + std::to_string(i) + " lies outside the time range");
    }
    if (t0 < 1) {
      throw Error("treated unit " + std::to_string(i) + " needs a period before its adoption");
    }
    if (t0 > n_periods - 2) {
      throw Error("treated unit " + std::to_string(i) + " has no post-adoption period");
    }
    missing.row(i).tail(n_periods - t0 - 1).setConstant(true);
  }
  return Mask(std::move(missing));
}

CovariateSet CovariateSet::none(Index n_units) {
  CovariateSet c;
  c.unit.resize(n_units, 0);
  return c;
}

CovariateSet CovariateSet::normalized(const Eigen::MatrixXd& raw, std::vector<std::string> names) {
  if (static_cast<Index>(names.size()) != raw.cols()) {
    throw Error("covariate names do not match column count");
  }
  if (!raw.allFinite()) throw Error("covariates contain missing or non-finite values");
  CovariateSet out;
  std::vector<Index> keep;
  const double n = static_cast<double>(raw.rows());
  for (Index p = 0; p < raw.cols(); ++p) {
    const double mean = raw.col(p).mean();
    const double var = (raw.col(p).array() - mean).square().sum() / (n - 1.0);
    if (!(var > 0.0)) {
      out.warnings.push_back("dropped zero-variance covariate '" + names[static_cast<std::size_t>(p)] + "'");
      continue;
    }
    keep.push_back(p);
  }
  out.unit.resize(raw.rows(), static_cast<Index>(keep.size()));
  for (std::size_t k = 0; k < keep.size(); ++k) {
    const auto col = raw.col(keep[k]);
    const double mean = col.mean();
    const double sd = std::sqrt((col.array() - mean).square().sum() / (n - 1.0));
    out.unit.col(static_cast<Index>(k)) = (col.array() - mean) / sd;
    out.unit_names.push_back(names[static_cast<std::size_t>(keep[k])]);
  }
  for (Index p = 0; p < out.unit.cols(); ++p) {
    const auto col = out.unit.col(p);
    const double mean = col.mean();
    const double sd = std::sqrt((col.array() - mean).square().sum() / (n - 1.0));
    if (std::abs(mean) > 1e-8 || std::abs(sd - 1.0) > 1e-8) {
      throw Error("covariate '" + out.unit_names[static_cast<std::size_t>(p)] + "' failed normalization");
    }
  }
  return out;
}

double rmse(const Eigen::MatrixXd& actual, const Eigen::MatrixXd& predicted, const Mask& evaluate) {
  if (actual.rows() != predicted.rows() || actual.cols() != predicted.cols() ||
      actual.rows() != evaluate.rows() || actual.cols() != evaluate.cols()) {
    throw Error("rmse: matrices are not conformable");
  }
  const Index n = evaluate.missing_count();
  if (n == 0) throw Error("rmse: empty evaluation set");
  const Eigen::ArrayXXd diff = actual.array() - predicted.array();
  const double sse = evaluate.missing().select(diff.square(), 0.0).sum();
  return std::sqrt(sse / static_cast<double>(n));
}

double gini(std::span<const double> sizes) {
  if (sizes.empty()) throw Error("gini: no sizes");
  std::vector<double> x(sizes.begin(), sizes.end());
  for (double v : x) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw Error("gini: sizes must be nonnegative");
  }
  std::sort(x.begin(), x.end());
  const double n = static_cast<double>(x.size());
  const double total = std::accumulate(x.begin(), x.end(), 0.0);
  if (!(total > 0.0)) throw Error("gini: sizes sum to zero");
  // sum_{i,j} |x_i - x_j| = 2 * sum_k (2k - n + 1) x_(k) for sorted x
  double weighted = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    weighted += (2.0 * static_cast<double>(k) - n + 1.0) * x[k];
  }
  return weighted / (n * total);
}

double adjusted_gini(std::span<const double> farm_sizes, std::size_t n_farms,
                     std::size_t n_adult_males) {
  if (n_adult_males == 0) throw Error("adjusted_gini: zero adult males");
  if (n_farms == 0) throw Error("adjusted_gini: zero farms");
  if (n_farms > n_adult_males) throw Error("adjusted_gini: more farms than adult males");
  const double g = gini(farm_sizes);
  const double share = static_cast<double>(n_farms) / static_cast<double>(n_adult_males);
  return 1.0 - share * (1.0 - g);
}

std::vector<double> expand_bins(std::span<const SizeBin> bins) {
  std::vector<double> out;
  for (const auto& b : bins) {
    if (b.upper < b.lower || b.lower < 0.0) throw Error("expand_bins: invalid bin bounds");
    out.insert(out.end(), b.count, 0.5 * (b.lower + b.upper));
  }
  return out;
}

}  // namespace panelcf
