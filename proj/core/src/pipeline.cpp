#include "panelcf/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

#include "panelcf/inference.hpp"
#include "panelcf/mcnnm.hpp"
#include "panelcf/parallel.hpp"

#ifndef PANELCF_VERSION
#define PANELCF_VERSION "0.0.0"
#endif

namespace panelcf {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

const std::set<std::string> kCommands{"fit", "test", "placebo", "did", "simulate"};

std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

template <class T>
json opt(const std::optional<T>& v) {
  return v ? json(*v) : json(nullptr);
}

Method method_of(const std::string& name) {
  auto m = parse_method(name);
  if (!m) throw Error("unknown estimator '" + name + "'");
  return *m;
}

Scheme scheme_of(const std::string& name) {
  auto s = parse_scheme(name);
  if (!s) throw Error("unknown scheme '" + name + "'");
  return *s;
}

TimeAlignment alignment_of(const RunConfig& c) {
  return c.alignment == "event" ? TimeAlignment::event : TimeAlignment::calendar;
}

std::vector<std::string> comment_lines(const RunConfig& config, Index n, Index t) {
  return {"panelcf " + std::string(version()), "config_hash " + config_hash(config),
          "seed " + std::to_string(config.seed), "dimensions " + std::to_string(n) + "x" + std::to_string(t)};
}

std::string with_comments(const std::vector<std::string>& comments, const std::string& body) {
  std::string out;
  for (const auto& c : comments) out += "# " + c + "\n";
  return out + body;
}

fs::path emit(const RunConfig& config, const std::string& name, const std::string& text) {
  const fs::path path = fs::path(config.out) / name;
  write_file(path, text);
  return path;
}

const TreatmentPlan& require_plan(const Dataset& data, const std::string& command) {
  if (!data.plan) throw Error("'" + command + "' needs a treatment file");
  return *data.plan;
}

std::optional<Index> pooled_column(const Dataset& data, const RunConfig& config) {
  if (!config.pooled_t0) return std::nullopt;
  auto col = data.panel.time_index(*config.pooled_t0);
  if (!col || *col < 1) throw Error("pooled t0 " + std::to_string(*config.pooled_t0) + " is not a usable period");
  return *col - 1;
}

// ---------------------------------------------------------------------------

std::vector<fs::path> run_fit(const RunConfig& config) {
  const Dataset data = load_dataset(config);
  const TreatmentPlan& plan = require_plan(data, "fit");
  const Mask mask = build_mask(plan, data.panel.n_units(), data.panel.n_periods());
  const Method method = method_of(config.estimator);
  const EstimatorRun run = run_estimator(method, data.panel, mask, data.covariates, config, task_seed(config.seed, 1));
  const EffectSeries effects =
      compute_effects(data.panel, run.y_hat, plan, pooled_column(data, config), alignment_of(config));
  const auto comments = comment_lines(config, data.panel.n_units(), data.panel.n_periods());

  std::ostringstream cf;
  cf << "unit,time,observed,predicted,missing\n";
  for (Index i = 0; i < data.panel.n_units(); ++i) {
    for (Index t = 0; t < data.panel.n_periods(); ++t) {
      cf << csv_field(data.panel.unit_ids()[static_cast<std::size_t>(i)]) << ','
         << data.panel.time_ids()[static_cast<std::size_t>(t)] << ',' << format_number(data.panel.values()(i, t))
         << ',' << format_number(run.y_hat(i, t)) << ',' << (mask.is_missing(i, t) ? 1 : 0) << '\n';
    }
  }

  std::optional<BootstrapBand> band;
  json band_note = nullptr;
  if (config.bootstrap > 0) {
    if (effects.alpha.allFinite()) {
      band = block_bootstrap_band(effects.alpha, config.bootstrap, config.level, task_seed(config.seed, 3),
                                  config.block_length ? std::optional<Index>(*config.block_length) : std::nullopt);
    } else {
      band_note = "bootstrap band skipped: event-time deviations are unbalanced";
    }
  }
  std::ostringstream ef;
  ef << "period,alpha_bar,se,ci_low,ci_high,post\n";
  const Index t_count = effects.alpha_bar.size();
  for (Index t = 0; t < t_count; ++t) {
    ef << effects.periods[static_cast<std::size_t>(t)] << ',' << format_number(effects.alpha_bar(t)) << ',';
    if (band) {
      ef << format_number(band->se(t)) << ',' << format_number(band->ci_low(t)) << ','
         << format_number(band->ci_high(t));
    } else {
      ef << ",,";
    }
    ef << ',' << (t > effects.t0_index ? 1 : 0) << '\n';
  }

  json report = report_header(config, data.panel.n_units(), data.panel.n_periods());
  report["command"] = "fit";
  report["estimator"] = std::string(method_name(method));
  report["diagnostics"] = run.diagnostics;
  report["validation"] = to_json(data.report);
  report["pooled_t0_index"] = effects.t0_index;
  report["post_length"] = effects.post_length;
  report["mean_post_effect"] = effects.post_window().mean();
  if (band) {
    report["bootstrap"] = {{"replicates", band->replicates}, {"block_length", band->block_length},
                           {"level", band->level}};
  } else {
    report["bootstrap"] = band_note;
  }

  return {emit(config, "counterfactuals.csv", with_comments(comments, cf.str())),
          emit(config, "effects.csv", with_comments(comments, ef.str())),
          emit(config, "fit.json", report.dump(2) + "\n")};
}

std::vector<fs::path> run_test(const RunConfig& config) {
  const Dataset data = load_dataset(config);
  const TreatmentPlan& plan = require_plan(data, "test");
  const Mask mask = build_mask(plan, data.panel.n_units(), data.panel.n_periods());
  const Method method = method_of(config.estimator);
  const EstimatorRun run = run_estimator(method, data.panel, mask, data.covariates, config, task_seed(config.seed, 1));
  json report = test_report(data, run.y_hat, config);
  report["diagnostics"] = run.diagnostics;
  return {emit(config, "test.json", report.dump(2) + "\n")};
}

std::vector<fs::path> run_placebo(const RunConfig& config) {
  const Dataset data = load_dataset(config);
  std::vector<fs::path> written;

  PanelMatrix controls = data.panel;
  if (data.plan) controls = data.panel.select_units(data.plan->control_units());
  PlaceboConfig suite;
  suite.treated_fraction = config.treated_fraction;
  suite.t0_ratios = config.ratios;
  suite.n_trials = config.trials;
  suite.adoption = config.adoption == "simultaneous" ? Adoption::simultaneous : Adoption::staggered;
  suite.seed = task_seed(config.seed, 5);
  for (const auto& name : config.estimators) suite.estimators.push_back(configured_estimator(method_of(name), config));
  const PlaceboReport result = run_placebo_suite(controls, suite);

  const auto comments = comment_lines(config, controls.n_units(), controls.n_periods());
  std::ostringstream trials;
  trials << "estimator,ratio,trial,rmse\n";
  std::ostringstream summary;
  summary << "estimator,ratio,n_trials,mean,sd,lower,upper\n";
  for (const auto& cell : result.cells) {
    for (std::size_t k = 0; k < cell.rmse.size(); ++k) {
      trials << csv_field(cell.estimator) << ',' << format_number(cell.ratio) << ',' << k << ','
             << format_number(cell.rmse[k]) << '\n';
    }
    summary << csv_field(cell.estimator) << ',' << format_number(cell.ratio) << ',' << cell.rmse.size() << ','
            << format_number(cell.mean) << ',' << format_number(cell.sd) << ',' << format_number(cell.lower) << ','
            << format_number(cell.upper) << '\n';
  }
  written.push_back(emit(config, "placebo_trials.csv", with_comments(comments, trials.str())));
  written.push_back(emit(config, "placebo_summary.csv", with_comments(comments, summary.str())));

  json report = report_header(config, data.panel.n_units(), data.panel.n_periods());
  report["command"] = "placebo";
  report["validation"] = to_json(data.report);
  report["suite"] = {{"control_units", controls.n_units()}, {"trials", config.trials}, {"ratios", config.ratios}};

  if (data.plan) {
    BackdatingOptions bd;
    bd.taus.assign(config.tau.begin(), config.tau.end());
    bd.qs = config.q;
    bd.schemes.clear();
    for (const auto& s : config.schemes) bd.schemes.push_back(scheme_of(s));
    bd.n_permutations = config.n_perms;
    bd.seed = task_seed(config.seed, 4);
    bd.estimator = configured_estimator(method_of(config.estimator), config);
    bd.null_imposed = config.trajectory == "null_imposed";
    const auto rows = backdating_test(data.panel, *data.plan, data.covariates, bd);
    std::ostringstream table;
    table << "tau,q,scheme,s_observed,p_value,n_permutations,block_length\n";
    for (const auto& r : rows) {
      table << r.tau << ',' << format_number(r.q) << ',' << scheme_name(r.scheme) << ','
            << format_number(r.s_observed) << ',' << format_number(r.p_value) << ',' << r.n_permutations << ','
            << r.block_length << '\n';
    }
    written.push_back(emit(config, "backdating.csv",
                           with_comments(comment_lines(config, data.panel.n_units(), data.panel.n_periods()),
                                         table.str())));
    report["backdating"] = {{"estimator", std::string(method_name(method_of(config.estimator)))},
                            {"rows", rows.size()}};
  } else {
    report["backdating"] = "skipped: no treatment file";
  }
  written.push_back(emit(config, "placebo.json", report.dump(2) + "\n"));
  return written;
}

std::vector<fs::path> run_did(const RunConfig& config) {
  const Dataset data = load_dataset(config);
  const TreatmentPlan& plan = require_plan(data, "did");
  if (!data.intensity) throw Error("'did' needs an intensity file");
  const Mask mask = build_mask(plan, data.panel.n_units(), data.panel.n_periods());
  DidContinuousOptions opts;
  opts.bootstrap = config.bootstrap;
  opts.seed = task_seed(config.seed, 6);
  opts.level = config.level;
  opts.normal_interval = config.normal_interval;
  const DidContinuousFit fit = fit_did_continuous(data.panel, mask, *data.intensity, data.covariates, opts);
  json report = report_header(config, data.panel.n_units(), data.panel.n_periods());
  report["command"] = "did";
  report["fit"] = to_json(fit);
  report["covariates"] = data.covariates.unit_time_names;
  report["validation"] = to_json(data.report);
  return {emit(config, "did.json", report.dump(2) + "\n")};
}

std::vector<fs::path> run_simulate(const RunConfig& config) {
  SyntheticSpec spec;
  spec.n_units = config.n_units;
  spec.n_periods = config.n_periods;
  spec.rank = config.rank;
  spec.noise_sd = config.noise_sd;
  spec.fixed_effects = config.fixed_effects;
  spec.treated_count = config.treated;
  spec.effect = config.effect;
  spec.seed = config.seed;
  // synthetic periods are labelled 1..T, so column = label - 1
  if (config.t0) spec.last_observed = static_cast<Index>(*config.t0) - 2;
  const SyntheticPanel sim = generate_synthetic_panel(spec);
  const auto comments = comment_lines(config, sim.panel.n_units(), sim.panel.n_periods());

  std::vector<fs::path> written;
  std::ostringstream outcomes;
  write_outcomes(outcomes, sim.panel, comments);
  written.push_back(emit(config, "outcomes.csv", outcomes.str()));
  if (sim.plan) {
    std::ostringstream treatment;
    write_treatment(treatment, sim.panel, *sim.plan, comments);
    written.push_back(emit(config, "treatment.csv", treatment.str()));
  }
  std::ostringstream truth;
  truth << "unit,time,untreated,low_rank\n";
  for (Index i = 0; i < sim.panel.n_units(); ++i) {
    for (Index t = 0; t < sim.panel.n_periods(); ++t) {
      truth << csv_field(sim.panel.unit_ids()[static_cast<std::size_t>(i)]) << ','
            << sim.panel.time_ids()[static_cast<std::size_t>(t)] << ',' << format_number(sim.untreated(i, t)) << ','
            << format_number(sim.low_rank(i, t)) << '\n';
    }
  }
  written.push_back(emit(config, "truth.csv", with_comments(comments, truth.str())));

  json report = report_header(config, sim.panel.n_units(), sim.panel.n_periods());
  report["command"] = "simulate";
  report["rank"] = spec.rank;
  report["noise_sd"] = spec.noise_sd;
  report["treated"] = spec.treated_count;
  report["effect"] = spec.effect;
  written.push_back(emit(config, "simulate.json", report.dump(2) + "\n"));
  return written;
}

}  // namespace

std::string_view version() { return PANELCF_VERSION; }

void validate(const RunConfig& c) {
  if (!kCommands.count(c.command)) throw Error("unknown command '" + c.command + "'");
  if (c.command != "simulate" && c.outcomes.empty()) throw Error("'" + c.command + "' needs an outcomes file");
  method_of(c.estimator);
  for (const auto& e : c.estimators) method_of(e);
  for (const auto& s : c.schemes) scheme_of(s);
  if (c.schemes.empty()) throw Error("at least one scheme is required");
  if (c.trajectory != "null_imposed" && c.trajectory != "masked") {
    throw Error("unknown trajectory '" + c.trajectory + "' (null_imposed or masked)");
  }
  if (c.q.empty()) throw Error("at least one q is required");
  for (double q : c.q) {
    if (!(q > 0.0) || !std::isfinite(q)) throw Error("q must be positive");
  }
  if (c.n_perms < 1) throw Error("n-perms must be positive");
  if (c.bootstrap < 0) throw Error("bootstrap must be nonnegative");
  if (c.bootstrap > 0 && c.bootstrap < 100) throw Error("bootstrap needs at least 100 replicates (or 0 to skip)");
  for (int t : c.tau) {
    if (t < 1) throw Error("tau must be positive");
  }
  if (c.alignment != "calendar" && c.alignment != "event") throw Error("alignment must be calendar or event");
  if (c.adoption != "staggered" && c.adoption != "simultaneous") {
    throw Error("adoption must be staggered or simultaneous");
  }
  if (c.lambda && !(*c.lambda >= 0.0)) throw Error("lambda must be nonnegative");
  if (c.cv_folds < 2) throw Error("cv-folds must be at least 2");
  if (c.lambda_count < 1) throw Error("lambda-count must be positive");
  if (c.max_rank < 1) throw Error("max-rank must be positive");
  if (c.trials < 1) throw Error("trials must be positive");
  if (!(c.level > 0.0 && c.level < 1.0)) throw Error("level must lie in (0, 1)");
  if (c.block_length && *c.block_length < 1) throw Error("block length must be positive");
  if (c.threads < 0) throw Error("threads must be nonnegative");
}

json to_json(const RunConfig& c) {
  return {{"command", c.command},
          {"outcomes", c.outcomes},
          {"covariates", c.covariates},
          {"treatment", c.treatment},
          {"intensity", c.intensity},
          {"deflator", c.deflator},
          {"population", c.population},
          {"log_transform", c.log_transform},
          {"split_time", opt(c.split_time)},
          {"estimator", c.estimator},
          {"lambda", opt(c.lambda)},
          {"cv_folds", c.cv_folds},
          {"lambda_count", c.lambda_count},
          {"max_rank", c.max_rank},
          {"alignment", c.alignment},
          {"pooled_t0", opt(c.pooled_t0)},
          {"q", c.q},
          {"schemes", c.schemes},
          {"n_perms", c.n_perms},
          {"bootstrap", c.bootstrap},
          {"block_length", opt(c.block_length)},
          {"refit", c.refit},
          {"trajectory", c.trajectory},
          {"level", c.level},
          {"normal_interval", c.normal_interval},
          {"tau", c.tau},
          {"estimators", c.estimators},
          {"ratios", c.ratios},
          {"trials", c.trials},
          {"treated_fraction", c.treated_fraction},
          {"adoption", c.adoption},
          {"n_units", c.n_units},
          {"n_periods", c.n_periods},
          {"rank", c.rank},
          {"noise_sd", c.noise_sd},
          {"fixed_effects", c.fixed_effects},
          {"treated", c.treated},
          {"t0", opt(c.t0)},
          {"effect", c.effect},
          {"seed", c.seed}};
}

std::string config_hash(const RunConfig& config) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(to_json(config).dump())));
  return buf;
}

json report_header(const RunConfig& config, std::optional<Index> n_units, std::optional<Index> n_periods) {
  json h = {{"version", std::string(version())}, {"config_hash", config_hash(config)}, {"seed", config.seed}};
  h["config"] = to_json(config);
  if (n_units) h["n_units"] = *n_units;
  if (n_periods) h["n_periods"] = *n_periods;
  return h;
}

Dataset load_dataset(const RunConfig& c) {
  DatasetPaths paths;
  paths.outcomes = c.outcomes;
  auto set = [](std::optional<fs::path>& slot, const std::string& p) {
    if (!p.empty()) slot = p;
  };
  set(paths.covariates, c.covariates);
  set(paths.treatment, c.treatment);
  set(paths.intensity, c.intensity);
  set(paths.deflator, c.deflator);
  set(paths.population, c.population);
  PreprocessConfig pre;
  pre.log_transform = c.log_transform;
  pre.split_time = c.split_time;
  return ingest(paths, pre);
}

EstimatorRun run_estimator(Method method, const PanelMatrix& panel, const Mask& held_out, const CovariateSet& covariates,
                           const RunConfig& config, std::uint64_t seed, bool fit_all_cells) {
  // matrix methods drop the mask; row regressions keep it to know their targets
  const Mask mask = fit_all_cells ? Mask::none(panel.n_units(), panel.n_periods()) : held_out;
  switch (method) {
    case Method::mcnnm: {
      McnnmFit fit;
      json cv_json = nullptr;
      if (config.lambda) {
        SolverOptions opts;
        opts.lambda = *config.lambda;
        fit = fit_mcnnm(panel, mask, covariates, opts);
      } else {
        CvConfig cv;
        const double top = lambda_max(panel, mask, covariates);
        if (top > 0.0) cv.lambda_grid = lambda_grid(top, static_cast<std::size_t>(config.lambda_count));
        cv.n_folds = config.cv_folds;
        cv.seed = seed;
        CvResult cv_result;
        fit = fit_mcnnm_cv(panel, mask, covariates, cv, &cv_result);
        cv_json = to_json(cv_result);
      }
      json diag = to_json(fit);
      diag["cv"] = cv_json;
      return {fit.y_hat, diag};
    }
    case Method::did: {
      BaselineFit fit = fit_did_binary(panel, mask);
      return {std::move(fit.y_hat), std::move(fit.diagnostics)};
    }
    case Method::hr_en:
    case Method::vt_en: {
      ElasticNetConfig en;
      en.n_folds = config.cv_folds;
      en.seed = seed;
      en.fit_all_periods = fit_all_cells;
      BaselineFit fit = fit_elastic_net(panel, held_out, method == Method::hr_en ? Orientation::horizontal
                                                                            : Orientation::vertical, en);
      return {std::move(fit.y_hat), std::move(fit.diagnostics)};
    }
    case Method::pca:
    case Method::svd: {
      const Index rank = select_rank_cv(panel, mask, method, config.max_rank, config.cv_folds, seed);
      LowRankOptions opts;
      opts.rank = rank;
      BaselineFit fit = method == Method::pca ? fit_pca_iterative(panel, mask, opts) : fit_svd_em(panel, mask, opts);
      fit.diagnostics["selected_rank"] = rank;
      return {std::move(fit.y_hat), std::move(fit.diagnostics)};
    }
    case Method::sc_adh: {
      SynthControlOptions opts;
      opts.match_covariates = covariates.n_unit_covariates() > 0;
      opts.fit_all_periods = fit_all_cells;
      BaselineFit fit = fit_synth_control(panel, held_out, covariates, opts);
      return {std::move(fit.y_hat), std::move(fit.diagnostics)};
    }
  }
  throw Error("unhandled estimator");
}

Estimator configured_estimator(Method method, const RunConfig& config) {
  Estimator e;
  e.name = std::string(method_name(method));
  e.predict = [method, config](const EstimatorInput& in) {
    return run_estimator(method, in.panel, in.mask, in.covariates, config, in.seed, in.fit_all_cells).y_hat;
  };
  return e;
}

json test_report(const Dataset& data, const Eigen::MatrixXd& y_hat, const RunConfig& config) {
  const TreatmentPlan& plan = require_plan(data, "test");
  const std::optional<Index> pooled = pooled_column(data, config);
  const TimeAlignment alignment = alignment_of(config);
  const Mask mask = build_mask(plan, data.panel.n_units(), data.panel.n_periods());
  const Method method = method_of(config.estimator);
  // under the sharp null the treated cells are untreated outcomes, so the
  // trajectory comes from a fit that uses them; pre and post deviations are
  // then both in-sample and exchangeable
  const bool null_imposed = !config.refit && config.trajectory == "null_imposed";
  const EffectSeries effects =
      null_imposed ? compute_effects(data.panel,
                                     run_estimator(method, data.panel, mask, data.covariates, config,
                                                   task_seed(config.seed, 2), true)
                                         .y_hat,
                                     plan, pooled, alignment)
                   : compute_effects(data.panel, y_hat, plan, pooled, alignment);

  json results = json::array();
  for (std::size_t si = 0; si < config.schemes.size(); ++si) {
    const Scheme scheme = scheme_of(config.schemes[si]);
    PermutationOptions po;
    po.scheme = scheme;
    po.n_permutations = config.n_perms;
    po.seed = task_seed(config.seed, 100 + static_cast<std::uint64_t>(scheme));
    if (config.block_length) po.block_length = *config.block_length;

    if (!config.refit) {
      for (double q : config.q) {
        po.q = q;
        results.push_back(to_json(permutation_test(effects, po)));
      }
      continue;
    }

    // refit: permute the outcome columns and rerun the estimator per ordering
    const Index t_count = data.panel.n_periods();
    const Index block = scheme == Scheme::iid_block
                            ? (po.block_length ? *po.block_length : optimal_block_length(effects.alpha_bar))
                            : 0;
    const auto orders = permutations(t_count, po, block);
    std::vector<Eigen::VectorXd> windows(orders.size());
    parallel_for(orders.size(), [&](std::size_t k) {
      Eigen::MatrixXd y(data.panel.n_units(), t_count);
      for (Index t = 0; t < t_count; ++t) y.col(t) = data.panel.values().col(orders[k][static_cast<std::size_t>(t)]);
      const PanelMatrix permuted = data.panel.with_values(std::move(y));
      const EstimatorRun run =
          run_estimator(method, permuted, mask, data.covariates, config, task_seed(po.seed, 1 + k));
      windows[k] = compute_effects(permuted, run.y_hat, plan, pooled, alignment).post_window();
    });
    for (double q : config.q) {
      const double s_obs = s_stat(effects.post_window(), q);
      std::size_t below = 0;
      for (const auto& w : windows) below += s_stat(w, q) < s_obs ? 1 : 0;
      TestResult tr;
      tr.scheme = scheme;
      tr.q = q;
      tr.s_observed = s_obs;
      tr.n_permutations = static_cast<int>(windows.size());
      tr.p_value = static_cast<double>(windows.size() - below) / static_cast<double>(windows.size());
      tr.block_length = block;
      results.push_back(to_json(tr));
    }
  }

  json report = report_header(config, data.panel.n_units(), data.panel.n_periods());
  report["command"] = "test";
  report["estimator"] = std::string(method_name(method));
  report["alignment"] = config.alignment;
  report["pooled_t0_index"] = effects.t0_index;
  report["post_length"] = effects.post_length;
  report["refit"] = config.refit;
  report["trajectory"] = config.refit ? "refit" : config.trajectory;
  report["results"] = results;
  report["validation"] = to_json(data.report);
  return report;
}

std::vector<fs::path> run_pipeline(const RunConfig& config) {
  validate(config);
  set_thread_limit(static_cast<unsigned>(config.threads));
  if (config.command == "fit") return run_fit(config);
  if (config.command == "test") return run_test(config);
  if (config.command == "placebo") return run_placebo(config);
  if (config.command == "did") return run_did(config);
  return run_simulate(config);
}

}  // namespace panelcf
