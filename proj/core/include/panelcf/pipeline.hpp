#pragma once

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "panelcf/baseline.hpp"
#include "panelcf/io.hpp"
#include "panelcf/placebo.hpp"

namespace panelcf {

std::string_view version();

/// Everything a run depends on. `threads` and `out` do not enter the hash,
/// so reports are identical across worker counts and output locations.
struct RunConfig {
  std::string command;  // fit | test | placebo | did | simulate

  // data
  std::string outcomes;
  std::string covariates;
  std::string treatment;
  std::string intensity;
  std::string deflator;
  std::string population;
  bool log_transform = false;
  std::optional<int> split_time;

  // estimation
  std::string estimator = "mcnnm";
  std::optional<double> lambda;
  int cv_folds = 5;
  int lambda_count = 20;
  int max_rank = 5;
  std::string alignment = "calendar";
  std::optional<int> pooled_t0;  // first exposed period label

  // inference
  std::vector<double> q{1.0, 2.0};
  std::vector<std::string> schemes{"iid", "iid_block", "moving_block"};
  int n_perms = 1000;
  int bootstrap = 1000;
  std::optional<int> block_length;
  bool refit = false;
  std::string trajectory = "null_imposed";  // or "masked": deviations from the held-out fit
  double level = 0.95;
  bool normal_interval = false;

  // placebo
  std::vector<int> tau{1, 10, 25};
  std::vector<std::string> estimators{"mcnnm", "did", "hr-en", "vt-en", "pca", "sc-adh", "svd"};
  std::vector<double> ratios{0.25, 0.5, 0.75};
  int trials = 20;
  double treated_fraction = 0.5;
  std::string adoption = "staggered";

  // simulate
  int n_units = 40;
  int n_periods = 40;
  int rank = 2;
  double noise_sd = 0.1;
  bool fixed_effects = false;
  int treated = 0;
  std::optional<int> t0;  // first exposed period label (1-based periods)
  double effect = 0.0;

  std::uint64_t seed = 0;
  int threads = 0;  // 0: hardware concurrency
  std::string out = ".";
};

/// Throws on unknown command, estimator, scheme or out-of-range settings.
void validate(const RunConfig& config);

nlohmann::json to_json(const RunConfig& config);  // hashed fields only

/// 16 hex digits of FNV-1a over the canonical JSON of the hashed fields.
std::string config_hash(const RunConfig& config);

/// "version", "config_hash", "seed" and, when known, "n_units"/"n_periods".
nlohmann::json report_header(const RunConfig& config, std::optional<Index> n_units = std::nullopt,
                             std::optional<Index> n_periods = std::nullopt);

Dataset load_dataset(const RunConfig& config);

struct EstimatorRun {
  Eigen::MatrixXd y_hat;
  nlohmann::json diagnostics;
};

/// Fits `method` with the run's tuning settings.
EstimatorRun run_estimator(Method method, const PanelMatrix& panel, const Mask& mask, const CovariateSet& covariates,
                           const RunConfig& config, std::uint64_t seed, bool fit_all_cells = false);

Estimator configured_estimator(Method method, const RunConfig& config);

/// Permutation tests of the zero-effect null for every (scheme, q) pair,
/// given counterfactual predictions for the whole panel.
nlohmann::json test_report(const Dataset& data, const Eigen::MatrixXd& y_hat, const RunConfig& config);

/// Writes the command's artifacts into `config.out` and returns the list
/// of files written.
std::vector<std::filesystem::path> run_pipeline(const RunConfig& config);

}  // namespace panelcf
