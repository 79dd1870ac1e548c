#include "panelcf/placebo.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>

#include "panelcf/parallel.hpp"

namespace panelcf {
namespace {

std::uint64_t name_hash(const std::string& name) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : name) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace

SyntheticPanel generate_synthetic_panel(const SyntheticSpec& spec) {
  if (spec.n_units < 2 || spec.n_periods < 2) throw Error("synthetic panel needs at least 2 units and 2 periods");
  if (spec.rank < 1 || spec.rank > std::min(spec.n_units, spec.n_periods)) {
    throw Error("synthetic rank must lie in [1, min(N, T)]");
  }
  if (!(spec.noise_sd >= 0.0)) throw Error("noise sd must be nonnegative");
  if (spec.treated_count < 0 || spec.treated_count >= spec.n_units) throw Error("treated count must leave a control unit");

  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto draw = [&](Index rows, Index cols) {
    Eigen::MatrixXd m(rows, cols);
    for (Index c = 0; c < cols; ++c) {
      for (Index r = 0; r < rows; ++r) m(r, c) = normal(rng);
    }
    return m;
  };
  const Index n = spec.n_units;
  const Index t_count = spec.n_periods;
  const Eigen::MatrixXd u = draw(n, spec.rank);
  const Eigen::MatrixXd v = draw(t_count, spec.rank);
  Eigen::VectorXd unit_effects = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd time_effects = Eigen::VectorXd::Zero(t_count);
  if (spec.fixed_effects) {
    unit_effects = draw(n, 1);
    time_effects = draw(t_count, 1);
  }
  Eigen::MatrixXd noise = draw(n, t_count) * spec.noise_sd;
  Eigen::MatrixXd low_rank = u * v.transpose();
  Eigen::MatrixXd untreated = low_rank + unit_effects * Eigen::RowVectorXd::Ones(t_count) +
                              Eigen::VectorXd::Ones(n) * time_effects.transpose() + noise;

  Eigen::MatrixXd y = untreated;
  std::optional<TreatmentPlan> plan;
  Mask mask = Mask::none(n, t_count);
  if (spec.treated_count > 0) {
    const Index t0 = spec.last_observed.value_or(t_count / 2 - 1);
    std::vector<std::optional<Index>> adoption(static_cast<std::size_t>(n));
    for (Index i = n - spec.treated_count; i < n; ++i) adoption[static_cast<std::size_t>(i)] = t0;
    plan.emplace(std::move(adoption));
    mask = build_mask(*plan, n, t_count);
    y += mask.missing().cast<double>().matrix() * spec.effect;
  }
  return SyntheticPanel{PanelMatrix::from_values(std::move(y)),
                        std::move(low_rank),
                        std::move(unit_effects),
                        std::move(time_effects),
                        std::move(noise),
                        std::move(untreated),
                        std::move(plan),
                        std::move(mask)};
}

namespace {

Mask fit_mask(const EstimatorInput& in) {
  return in.fit_all_cells ? Mask::none(in.panel.n_units(), in.panel.n_periods()) : in.mask;
}

}  // namespace

Estimator standard_estimator(Method method, const EstimatorSettings& settings) {
  Estimator e;
  e.name = std::string(method_name(method));
  switch (method) {
    case Method::mcnnm:
      e.predict = [settings](const EstimatorInput& in) {
        CvConfig cv = settings.mcnnm;
        cv.seed = in.seed;
        return fit_mcnnm_cv(in.panel, fit_mask(in), in.covariates, cv).y_hat;
      };
      break;
    case Method::did:
      e.predict = [](const EstimatorInput& in) { return fit_did_binary(in.panel, fit_mask(in)).y_hat; };
      break;
    case Method::hr_en:
    case Method::vt_en:
      e.predict = [settings, method](const EstimatorInput& in) {
        ElasticNetConfig config = settings.elastic_net;
        config.seed = in.seed;
        config.fit_all_periods = in.fit_all_cells;
        const Orientation o = method == Method::hr_en ? Orientation::horizontal : Orientation::vertical;
        return fit_elastic_net(in.panel, in.mask, o, config).y_hat;
      };
      break;
    case Method::pca:
    case Method::svd:
      e.predict = [settings, method](const EstimatorInput& in) {
        const Mask mask = fit_mask(in);
        const Index rank = select_rank_cv(in.panel, mask, method, settings.max_rank, settings.rank_folds, in.seed);
        const LowRankOptions opts{rank, settings.low_rank_max_iter, settings.low_rank_tol, std::nullopt};
        return method == Method::pca ? fit_pca_iterative(in.panel, mask, opts).y_hat
                                     : fit_svd_em(in.panel, mask, opts).y_hat;
      };
      break;
    case Method::sc_adh:
      e.predict = [settings](const EstimatorInput& in) {
        SynthControlOptions opts = settings.synth;
        opts.fit_all_periods = in.fit_all_cells;
        return fit_synth_control(in.panel, in.mask, in.covariates, opts).y_hat;
      };
      break;
  }
  return e;
}

const PlaceboCell& PlaceboReport::at(const std::string& estimator, double ratio) const {
  for (const auto& c : cells) {
    if (c.estimator == estimator && c.ratio == ratio) return c;
  }
  throw Error("no placebo result for " + estimator);
}

TreatmentPlan placebo_assignment(Index n_units, Index n_periods, double treated_fraction, double ratio,
                                 Adoption adoption, std::uint64_t seed) {
  if (!(treated_fraction > 0.0 && treated_fraction < 1.0)) throw Error("treated fraction must lie in (0, 1)");
  if (!(ratio > 0.0 && ratio < 1.0)) throw Error("T0/T ratios must lie in (0, 1)");
  const auto q_count = static_cast<Index>(std::lround(treated_fraction * static_cast<double>(n_units)));
  if (q_count < 1 || q_count >= n_units) {
    throw Error("treated fraction yields zero treated or zero control units");
  }
  if (n_periods < 3) throw Error("placebo trials need at least 3 periods");
  std::mt19937_64 rng(seed);
  std::vector<Index> units(static_cast<std::size_t>(n_units));
  std::iota(units.begin(), units.end(), Index{0});
  std::shuffle(units.begin(), units.end(), rng);

  const Index target = std::lround(ratio * static_cast<double>(n_periods)) - 1;
  const auto band = static_cast<Index>(std::lround(0.1 * static_cast<double>(n_periods)));
  std::uniform_int_distribution<Index> jitter(-band, band);
  std::vector<std::optional<Index>> last(static_cast<std::size_t>(n_units));
  for (Index k = 0; k < q_count; ++k) {
    Index t0 = target;
    if (adoption == Adoption::staggered) t0 += jitter(rng);
    last[static_cast<std::size_t>(units[static_cast<std::size_t>(k)])] = std::clamp<Index>(t0, 1, n_periods - 2);
  }
  return TreatmentPlan(std::move(last));
}

PlaceboReport run_placebo_suite(const PanelMatrix& controls, const PlaceboConfig& config) {
  if (config.estimators.empty()) throw Error("placebo suite needs at least one estimator");
  if (config.n_trials < 1) throw Error("placebo suite needs at least one trial");
  if (config.t0_ratios.empty()) throw Error("placebo suite needs at least one T0/T ratio");
  for (double r : config.t0_ratios) {
    if (!(r > 0.0 && r < 1.0)) throw Error("T0/T ratios must lie in (0, 1)");
  }
  if (!controls.values().allFinite()) throw Error("placebo panel must be complete");

  const std::size_t n_ratios = config.t0_ratios.size();
  const std::size_t n_est = config.estimators.size();
  const std::size_t tasks = static_cast<std::size_t>(config.n_trials) * n_ratios;
  // results[task][estimator]
  std::vector<std::vector<double>> results(tasks, std::vector<double>(n_est, 0.0));
  const CovariateSet none = CovariateSet::none(controls.n_units());

  // validate the assignment up front so errors surface before any fitting
  placebo_assignment(controls.n_units(), controls.n_periods(), config.treated_fraction, config.t0_ratios.front(),
                     config.adoption, config.seed);

  parallel_for(tasks, [&](std::size_t task) {
    const std::size_t trial = task / n_ratios;
    const std::size_t r = task % n_ratios;
    const std::uint64_t trial_seed = task_seed(config.seed, trial * 1000003ULL + r);
    const TreatmentPlan plan = placebo_assignment(controls.n_units(), controls.n_periods(), config.treated_fraction,
                                                  config.t0_ratios[r], config.adoption, trial_seed);
    const Mask mask = build_mask(plan, controls.n_units(), controls.n_periods());
    for (std::size_t e = 0; e < n_est; ++e) {
      const Estimator& est = config.estimators[e];
      const EstimatorInput input{controls, mask, none, task_seed(trial_seed, name_hash(est.name))};
      const Eigen::MatrixXd y_hat = est.predict(input);
      results[task][e] = rmse(controls.values(), y_hat, mask);
    }
  });

  PlaceboReport report;
  for (std::size_t e = 0; e < n_est; ++e) {
    for (std::size_t r = 0; r < n_ratios; ++r) {
      PlaceboCell cell;
      cell.estimator = config.estimators[e].name;
      cell.ratio = config.t0_ratios[r];
      for (int trial = 0; trial < config.n_trials; ++trial) {
        cell.rmse.push_back(results[static_cast<std::size_t>(trial) * n_ratios + r][e]);
      }
      const double n = static_cast<double>(cell.rmse.size());
      cell.mean = std::accumulate(cell.rmse.begin(), cell.rmse.end(), 0.0) / n;
      double ss = 0.0;
      for (double v : cell.rmse) ss += (v - cell.mean) * (v - cell.mean);
      cell.sd = cell.rmse.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
      cell.lower = cell.mean - 1.96 * cell.sd;
      cell.upper = cell.mean + 1.96 * cell.sd;
      report.cells.push_back(std::move(cell));
    }
  }
  std::stable_sort(report.cells.begin(), report.cells.end(), [](const PlaceboCell& a, const PlaceboCell& b) {
    return a.estimator != b.estimator ? a.estimator < b.estimator : a.ratio < b.ratio;
  });
  return report;
}

std::vector<BackdatingRow> backdating_test(const PanelMatrix& panel, const TreatmentPlan& plan,
                                           const CovariateSet& covariates, const BackdatingOptions& options) {
  if (plan.n_units() != panel.n_units()) throw Error("treatment plan does not match the panel");
  const Index pooled = plan.earliest_adoption();
  const Index pre_length = pooled + 1;
  for (Index tau : options.taus) {
    if (tau < 1) throw Error("backdating offsets must be positive");
    if (tau >= pre_length) {
      throw Error("tau = " + std::to_string(tau) + " leaves no training window before the backdated adoption");
    }
    if (pooled - tau < 1) {
      throw Error("tau = " + std::to_string(tau) + " leaves fewer than 2 training periods");
    }
  }
  const Estimator estimator = options.estimator ? *options.estimator : standard_estimator(Method::mcnnm);
  const PanelMatrix truncated = panel.select_periods(0, pre_length);
  CovariateSet cov = covariates;
  cov.unit_time.clear();
  cov.unit_time_names.clear();

  std::vector<BackdatingRow> rows;
  for (std::size_t k = 0; k < options.taus.size(); ++k) {
    const Index tau = options.taus[k];
    std::vector<std::optional<Index>> adoption(static_cast<std::size_t>(panel.n_units()));
    for (Index i : plan.treated_units()) adoption[static_cast<std::size_t>(i)] = pooled - tau;
    const TreatmentPlan shifted(std::move(adoption));
    const Mask mask = build_mask(shifted, truncated.n_units(), truncated.n_periods());
    const std::uint64_t fit_seed = task_seed(options.seed, k);
    const Eigen::MatrixXd y_hat = estimator.predict({truncated, mask, cov, fit_seed, options.null_imposed});
    const EffectSeries effects = compute_effects(truncated, y_hat, shifted);
    for (double q : options.qs) {
      for (Scheme scheme : options.schemes) {
        PermutationOptions po;
        po.scheme = scheme;
        po.q = q;
        po.n_permutations = options.n_permutations;
        po.seed = task_seed(fit_seed, 1 + static_cast<std::uint64_t>(scheme));
        const TestResult tr = permutation_test(effects, po);
        rows.push_back({tau, q, scheme, tr.s_observed, tr.p_value, tr.n_permutations, tr.block_length});
      }
    }
  }
  return rows;
}

}  // namespace panelcf
