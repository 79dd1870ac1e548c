#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "panelcf/error.hpp"

namespace panelcf {

using Index = Eigen::Index;
using BoolArray = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

/// N x T outcome matrix with unit labels (rows) and strictly increasing
/// integer time labels (columns).
class PanelMatrix {
 public:
  PanelMatrix(Eigen::MatrixXd values, std::vector<std::string> unit_ids,
              std::vector<int> time_ids);

  /// Labels default to "u0", "u1", ... and 1..T.
  static PanelMatrix from_values(Eigen::MatrixXd values);

  const Eigen::MatrixXd& values() const noexcept { return values_; }
  const std::vector<std::string>& unit_ids() const noexcept { return unit_ids_; }
  const std::vector<int>& time_ids() const noexcept { return time_ids_; }

  Index n_units() const noexcept { return values_.rows(); }
  Index n_periods() const noexcept { return values_.cols(); }

  std::optional<Index> unit_index(std::string_view unit) const;
  std::optional<Index> time_index(int time) const;

  PanelMatrix select_units(std::span<const Index> rows) const;
  PanelMatrix select_periods(Index first, Index count) const;
  PanelMatrix with_values(Eigen::MatrixXd values) const;

 private:
  Eigen::MatrixXd values_;
  std::vector<std::string> unit_ids_;
  std::vector<int> time_ids_;
};

/// Per-unit adoption. `last_observed(i)` is the column index of the final
/// untreated period of unit i; controls have none. Cells strictly after it
/// are counterfactual.
class TreatmentPlan {
 public:
  explicit TreatmentPlan(std::vector<std::optional<Index>> last_observed);

  /// Build from time labels; each adoption time must appear in `time_ids`.
  static TreatmentPlan from_times(const std::vector<std::optional<int>>& adoption_times,
                                  std::span<const int> time_ids);

  Index n_units() const noexcept { return static_cast<Index>(last_observed_.size()); }
  Index treated_count() const noexcept { return static_cast<Index>(treated_.size()); }
  Index control_count() const noexcept { return static_cast<Index>(controls_.size()); }

  bool is_treated(Index unit) const { return last_observed_.at(unit).has_value(); }
  const std::optional<Index>& last_observed(Index unit) const { return last_observed_.at(unit); }
  const std::vector<std::optional<Index>>& adoption() const noexcept { return last_observed_; }

  const std::vector<Index>& treated_units() const noexcept { return treated_; }
  const std::vector<Index>& control_units() const noexcept { return controls_; }

  /// Smallest last-observed index across treated units.
  Index earliest_adoption() const;

 private:
  std::vector<std::optional<Index>> last_observed_;
  std::vector<Index> treated_;
  std::vector<Index> controls_;
};

/// Missingness pattern: true marks a counterfactual (unobserved) cell.
class Mask {
 public:
  Mask() = default;
  explicit Mask(BoolArray missing) : missing_(std::move(missing)) {}

  static Mask none(Index n_units, Index n_periods);

  const BoolArray& missing() const noexcept { return missing_; }
  BoolArray observed() const { return !missing_; }
  bool is_missing(Index unit, Index period) const { return missing_(unit, period); }

  Index rows() const noexcept { return missing_.rows(); }
  Index cols() const noexcept { return missing_.cols(); }
  Index missing_count() const { return missing_.count(); }
  Index observed_count() const { return missing_.size() - missing_.count(); }

  /// Union with another mask of the same shape.
  Mask merged(const Mask& other) const;

 private:
  BoolArray missing_;
};

Mask build_mask(const TreatmentPlan& plan, Index n_units, Index n_periods);

/// Unit covariates (N x P, column-normalized) and optional unit-time
/// covariates (R matrices of shape N x T).
struct CovariateSet {
  Eigen::MatrixXd unit;
  std::vector<std::string> unit_names;
  std::vector<Eigen::MatrixXd> unit_time;
  std::vector<std::string> unit_time_names;
  std::vector<std::string> warnings;

  Index n_unit_covariates() const noexcept { return unit.cols(); }
  bool empty() const noexcept { return unit.cols() == 0 && unit_time.empty(); }

  static CovariateSet none(Index n_units);

  /// Normalizes each column to mean 0 and sd 1. Zero-variance columns are
  /// dropped and reported in `warnings`.
  static CovariateSet normalized(const Eigen::MatrixXd& raw, std::vector<std::string> names);
};

// ---------------------------------------------------------------------------
// Preprocessing

struct RawRecord {
  std::string unit;
  int time = 0;
  std::optional<double> value;
};

struct PreprocessConfig {
  std::map<int, double> deflator;                            // empty: identity
  std::map<std::pair<std::string, int>, double> population;  // empty: identity
  std::optional<int> split_time;  // last time label of the pre regime
  bool log_transform = false;
};

struct PreprocessResult {
  PanelMatrix panel;
  std::vector<std::string> dropped_units;  // zero pre-period variance
  std::size_t imputed_cells = 0;
};

PreprocessResult preprocess(std::span<const RawRecord> raw, const PreprocessConfig& config);

/// Carries the last observation forward and then the next observation
/// backward over NaN entries of `series`. Returns the number of filled
/// entries; throws when every entry is NaN.
std::size_t fill_locf_nocb(std::span<double> series);

// ---------------------------------------------------------------------------
// Metrics

/// Root-mean-squared error over the cells flagged in `evaluate`.
double rmse(const Eigen::MatrixXd& actual, const Eigen::MatrixXd& predicted, const Mask& evaluate);

double gini(std::span<const double> sizes);

/// Farm-size Gini adjusted for landless adults:
/// 1 - (farms / adult males) * (1 - G).
double adjusted_gini(std::span<const double> farm_sizes, std::size_t n_farms,
                     std::size_t n_adult_males);

struct SizeBin {
  double lower = 0.0;
  double upper = 0.0;
  std::size_t count = 0;
};

/// Expands binned farm counts to microdata at bin midpoints.
std::vector<double> expand_bins(std::span<const SizeBin> bins);

}  // namespace panelcf
