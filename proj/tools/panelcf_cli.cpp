// panelcf command-line front end.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <iostream>

#include "panelcf/pipeline.hpp"

int main(int argc, char** argv) {
  panelcf::RunConfig cfg;
  CLI::App app{"Counterfactual prediction and randomization inference for panel data", "panelcf"};
  app.set_version_flag("--version", std::string(panelcf::version()));
  app.set_config("--config", "", "TOML-style key = value file; command-line flags take precedence");
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.require_subcommand(1, 1);

  const std::pair<const char*, const char*> commands[] = {
      {"fit", "fit an estimator and write counterfactuals and effect series"},
      {"test", "permutation tests of the zero-effect null"},
      {"placebo", "control-only placebo suite and backdating table"},
      {"did", "continuous-intensity difference in differences"},
      {"simulate", "write a synthetic low-rank dataset"},
  };
  for (auto [name, help] : commands) app.add_subcommand(name, help)->fallthrough();

  // data
  app.add_option("--outcomes", cfg.outcomes, "long CSV: unit,time,value");
  app.add_option("--covariates", cfg.covariates, "unit,name,value or unit,time,name,value");
  app.add_option("--treatment", cfg.treatment, "unit,t0 with t0 the first exposed period");
  app.add_option("--intensity", cfg.intensity, "unit,time,intensity");
  app.add_option("--deflator", cfg.deflator, "time,value");
  app.add_option("--population", cfg.population, "unit,time,value");
  app.add_flag("--log", cfg.log_transform, "log-transform outcomes");
  app.add_option("--split-time", cfg.split_time, "last period of the pre regime for LOCF/NOCB");

  // estimation
  app.add_option("--estimator", cfg.estimator, "mcnnm, did, hr-en, vt-en, pca, sc-adh or svd")->capture_default_str();
  app.add_option("--lambda", cfg.lambda, "fixed MC-NNM lambda (skips cross-validation)");
  app.add_option("--cv-folds", cfg.cv_folds)->capture_default_str();
  app.add_option("--lambda-count", cfg.lambda_count)->capture_default_str();
  app.add_option("--max-rank", cfg.max_rank, "largest rank tried for PCA/SVD")->capture_default_str();
  app.add_option("--alignment", cfg.alignment, "calendar or event")->capture_default_str();
  app.add_option("--pooled-t0", cfg.pooled_t0, "first exposed period of the pooled test window");

  // inference
  app.add_option("--q", cfg.q, "exponents of the test statistic")->capture_default_str();
  app.add_option("--scheme", cfg.schemes, "iid, iid_block, moving_block")->capture_default_str();
  app.add_option("--n-perms", cfg.n_perms)->capture_default_str();
  app.add_option("--bootstrap", cfg.bootstrap, "bootstrap replicates; 0 skips")->capture_default_str();
  app.add_option("--block-length", cfg.block_length);
  app.add_flag("--refit", cfg.refit, "refit the estimator under every permutation");
  app.add_option("--trajectory", cfg.trajectory, "test trajectory: null_imposed or masked");
  app.add_option("--level", cfg.level)->capture_default_str();
  app.add_flag("--normal-interval", cfg.normal_interval, "normal bootstrap interval for did");

  // placebo
  app.add_option("--tau", cfg.tau, "backdating offsets")->capture_default_str();
  app.add_option("--estimators", cfg.estimators, "estimators in the placebo suite")->capture_default_str();
  app.add_option("--ratios", cfg.ratios, "T0/T ratios")->capture_default_str();
  app.add_option("--trials", cfg.trials)->capture_default_str();
  app.add_option("--treated-fraction", cfg.treated_fraction)->capture_default_str();
  app.add_option("--adoption", cfg.adoption, "staggered or simultaneous")->capture_default_str();

  // simulate
  app.add_option("--units", cfg.n_units)->capture_default_str();
  app.add_option("--periods", cfg.n_periods)->capture_default_str();
  app.add_option("--rank", cfg.rank)->capture_default_str();
  app.add_option("--noise-sd", cfg.noise_sd)->capture_default_str();
  app.add_flag("--fixed-effects", cfg.fixed_effects);
  app.add_option("--treated", cfg.treated, "number of treated units")->capture_default_str();
  app.add_option("--t0", cfg.t0, "first exposed period of the treated units");
  app.add_option("--effect", cfg.effect, "effect added to treated post-period cells")->capture_default_str();

  app.add_option("--seed", cfg.seed)->capture_default_str();
  app.add_option("--threads", cfg.threads, "worker cap; 0 uses every core")->capture_default_str();
  app.add_option("--out", cfg.out, "output directory")->capture_default_str();

  CLI11_PARSE(app, argc, argv);
  cfg.command = app.get_subcommands().front()->get_name();

  try {
    for (const auto& path : panelcf::run_pipeline(cfg)) std::cout << path.string() << '\n';
  } catch (const std::exception& e) {
    std::cerr << nlohmann::json{{"error", e.what()}, {"command", cfg.command}}.dump() << '\n';
    return 2;
  }
  return 0;
}
