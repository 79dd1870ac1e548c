#pragma once

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include "panelcf/panel.hpp"

namespace panelcf {

enum class TimeAlignment { calendar, event };

/// Observed-minus-predicted deviations of the treated units over every
/// period, their cross-unit mean and the pooled adoption column.
struct EffectSeries {
  Eigen::MatrixXd alpha;      // Q x T
  Eigen::VectorXd alpha_bar;  // T
  std::vector<int> periods;   // time labels, or event times in event alignment
  Index t0_index = 0;         // last pre-period column of the pooled window
  Index post_length = 0;      // T - t0_index - 1 (T_star)

  Eigen::VectorXd post_window() const { return alpha_bar.tail(post_length); }
};

/// `pooled_t0` defaults to the earliest treated adoption. In event
/// alignment each unit's series is shifted so its adoption lands on a
/// common column and the mean uses the units available at each event time.
EffectSeries compute_effects(const PanelMatrix& panel, const Eigen::MatrixXd& y_hat, const TreatmentPlan& plan,
                             std::optional<Index> pooled_t0 = std::nullopt,
                             TimeAlignment alignment = TimeAlignment::calendar);

/// ((1/sqrt(T*)) * sum |a_t|^q)^q over the post window.
double s_stat(std::span<const double> window, double q);
double s_stat(const Eigen::VectorXd& window, double q);

enum class Scheme { iid, iid_block, moving_block };

std::string_view scheme_name(Scheme scheme);
std::optional<Scheme> parse_scheme(std::string_view name);

struct PermutationOptions {
  Scheme scheme = Scheme::iid;
  int n_permutations = 1000;  // ignored by moving_block, which uses all T - 1 shifts
  double q = 1.0;
  std::uint64_t seed = 0;
  std::optional<Index> block_length;               // iid_block; default from optimal_block_length
  std::optional<Eigen::VectorXd> null_trajectory;  // post-window values under H0; zero by default
};

struct TestResult {
  Scheme scheme = Scheme::iid;
  double q = 1.0;
  double s_observed = 0.0;
  double p_value = 1.0;
  int n_permutations = 0;
  Index block_length = 0;  // iid_block only
};

/// Randomization p-value  1 - (1/|Pi|) sum I{S(pi) < S(observed)}  where
/// each permutation reorders the full alpha_bar trajectory in time.
TestResult permutation_test(const EffectSeries& effects, const PermutationOptions& options);

/// Same test on an arbitrary trajectory with the given post window length.
TestResult permutation_test(const Eigen::VectorXd& trajectory, Index post_length, const PermutationOptions& options);

/// Time orderings used by a scheme; exposed so callers can re-run a
/// pipeline per permutation.
std::vector<std::vector<Index>> permutations(Index n_periods, const PermutationOptions& options, Index block_length);

/// Automatic block length for the circular block bootstrap from flat-top
/// lag-window estimates of the autocovariances. Clamped to [1, ceil(T/3)].
Index optimal_block_length(std::span<const double> series);
Index optimal_block_length(const Eigen::VectorXd& series);

struct BootstrapBand {
  Eigen::VectorXd point;
  Eigen::VectorXd se;
  Eigen::VectorXd ci_low;
  Eigen::VectorXd ci_high;
  double level = 0.95;
  int replicates = 0;
  Index block_length = 1;
};

/// Circular block bootstrap over time applied jointly to every treated
/// deviation series; the band is point +/- z * SE per period.
BootstrapBand block_bootstrap_band(const Eigen::MatrixXd& alpha, int replicates, double level, std::uint64_t seed,
                                   std::optional<Index> block_length = std::nullopt);

nlohmann::json to_json(const TestResult& result);

}  // namespace panelcf
