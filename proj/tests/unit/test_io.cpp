#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "panelcf/io.hpp"
#include "panelcf/pipeline.hpp"

using namespace panelcf;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::path(PANELCF_TEST_TMP) / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write(const fs::path& p, const std::string& text) {
  std::ofstream(p, std::ios::binary) << text;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Csv, CommentsQuotesAndLines) {
  const auto t = parse_csv("# note\nunit,time,value\n\n\"a, inc\",1,2.5\n# mid\nb,2,\n", "x.csv");
  EXPECT_EQ(t.header, (std::vector<std::string>{"unit", "time", "value"}));
  ASSERT_EQ(t.rows.size(), 2u);
  EXPECT_EQ(t.rows[0][0], "a, inc");
  EXPECT_EQ(t.lines[1], 6u);
  EXPECT_EQ(t.number(0, 2), 2.5);
  EXPECT_FALSE(t.optional_number(1, 2));
  EXPECT_NE(error_of([] { parse_csv("a,b\n1,2,3\n", "y.csv"); }).find("y.csv:2"), std::string::npos);
  EXPECT_NE(error_of([&] { t.integer(0, 2); }).find("'time'") == std::string::npos ? std::string("x") : "",
            "");
}

TEST(Csv, HeaderMismatchNamesColumn) {
  const auto t = parse_csv("unit,period,value\n", "h.csv");
  const std::string msg = error_of([&] { t.require_header({"unit", "time", "value"}); });
  EXPECT_NE(msg.find("'time'"), std::string::npos);
  EXPECT_NE(msg.find("'period'"), std::string::npos);
  const auto bad = parse_csv("unit,time,value\nu,1,abc\n", "n.csv");
  EXPECT_NE(error_of([&] { bad.number(0, 2); }).find("n.csv:2"), std::string::npos);
}

TEST(Csv, NumberFormatRoundTrips) {
  for (double v : {0.1, -1e-300, 123456789.125, 1.0 / 3.0}) {
    EXPECT_EQ(std::stod(format_number(v)), v);
  }
  EXPECT_EQ(csv_field("plain"), "plain");
  EXPECT_EQ(csv_field("a\"b"), "\"a\"\"b\"");
}

TEST(Ingest, RoundTrip) {
  const fs::path dir = scratch("roundtrip");
  SyntheticSpec spec;
  spec.n_units = 7;
  spec.n_periods = 9;
  spec.treated_count = 3;
  spec.last_observed = 4;
  spec.seed = 1;
  const auto sim = generate_synthetic_panel(spec);
  Eigen::MatrixXd h = Eigen::MatrixXd::Random(7, 9);
  Eigen::MatrixXd raw_cov = Eigen::MatrixXd::Random(7, 2);
  {
    std::ofstream o(dir / "y.csv");
    write_outcomes(o, sim.panel, {"header comment"});
    std::ofstream t(dir / "t.csv");
    write_treatment(t, sim.panel, *sim.plan);
    std::ofstream i(dir / "h.csv");
    write_intensity(i, sim.panel, h);
    std::ofstream c(dir / "c.csv");
    write_unit_covariates(c, sim.panel, raw_cov, {"size", "age"});
  }
  DatasetPaths paths;
  paths.outcomes = dir / "y.csv";
  paths.treatment = dir / "t.csv";
  paths.intensity = dir / "h.csv";
  paths.covariates = dir / "c.csv";
  const Dataset d = ingest(paths);
  EXPECT_EQ(d.panel.values(), sim.panel.values());
  EXPECT_EQ(d.panel.unit_ids(), sim.panel.unit_ids());
  EXPECT_EQ(d.plan->adoption(), sim.plan->adoption());
  EXPECT_EQ(*d.intensity, h);
  EXPECT_EQ(d.covariates.unit, CovariateSet::normalized(raw_cov, {"size", "age"}).unit);
  EXPECT_EQ(d.report.imputed_cells, 0u);
  EXPECT_EQ(d.report.treated_units, 3);
}

TEST(Ingest, DuplicateRowIsNamed) {
  const fs::path dir = scratch("dup");
  write(dir / "y.csv", "unit,time,value\na,1,1\na,2,2\nb,1,3\na,2,5\nb,2,1\n");
  DatasetPaths paths;
  paths.outcomes = dir / "y.csv";
  const std::string msg = error_of([&] { ingest(paths); });
  EXPECT_NE(msg.find("y.csv:5"), std::string::npos) << msg;
  EXPECT_NE(msg.find("'a'"), std::string::npos);
  EXPECT_NE(msg.find("line 3"), std::string::npos);
}

TEST(Ingest, UnknownTreatedUnitIsNamed) {
  const fs::path dir = scratch("unknown");
  write(dir / "y.csv", "unit,time,value\na,1,1\na,2,2\na,3,4\nb,1,3\nb,2,1\nb,3,0\n");
  write(dir / "t.csv", "unit,t0\nzeta,3\n");
  DatasetPaths paths;
  paths.outcomes = dir / "y.csv";
  paths.treatment = dir / "t.csv";
  const std::string msg = error_of([&] { ingest(paths); });
  EXPECT_NE(msg.find("'zeta'"), std::string::npos) << msg;
}

TEST(Ingest, ImputationAndDropsAreReported) {
  const fs::path dir = scratch("report");
  write(dir / "y.csv",
        "unit,time,value\na,1,1\na,2,2\na,3,NA\na,4,4\nb,1,2\nb,2,2\nb,3,5\nb,4,6\nc,1,1\nc,2,3\nc,3,2\nc,4,9\n"
        "d,1,0\nd,2,2\nd,3,1\nd,4,1\n");
  write(dir / "t.csv", "unit,t0\nc,3\n");
  DatasetPaths paths;
  paths.outcomes = dir / "y.csv";
  paths.treatment = dir / "t.csv";
  const Dataset d = ingest(paths);
  EXPECT_EQ(d.report.imputed_cells, 1u);
  EXPECT_EQ(d.report.dropped_units, (std::vector<std::string>{"b"}));  // flat before the adoption
  EXPECT_EQ(d.panel.n_units(), 3);
  EXPECT_EQ(*d.plan->last_observed(*d.panel.unit_index("c")), 1);
}

TEST(Ingest, TimedCovariatesAndMissingIntensity) {
  const fs::path dir = scratch("timed");
  write(dir / "y.csv", "unit,time,value\na,1,1\na,2,2\nb,1,3\nb,2,1\n");
  write(dir / "x.csv", "unit,time,name,value\na,1,k,1\na,2,k,2\nb,1,k,3\nb,2,k,4\n");
  write(dir / "h.csv", "unit,time,intensity\na,1,1\na,2,2\nb,1,3\n");
  DatasetPaths paths;
  paths.outcomes = dir / "y.csv";
  paths.covariates = dir / "x.csv";
  const Dataset d = ingest(paths);
  ASSERT_EQ(d.covariates.unit_time.size(), 1u);
  EXPECT_EQ(d.covariates.unit_time[0](1, 1), 4.0);
  paths.intensity = dir / "h.csv";
  const std::string msg = error_of([&] { ingest(paths); });
  EXPECT_NE(msg.find("'b'"), std::string::npos) << msg;
}

TEST(Pipeline, PerfectFitTestReport) {
  SyntheticSpec spec;
  spec.n_units = 10;
  spec.n_periods = 20;
  spec.treated_count = 3;
  spec.seed = 2;
  const auto sim = generate_synthetic_panel(spec);
  Dataset data{sim.panel, sim.plan, CovariateSet::none(10), std::nullopt, {}};
  RunConfig cfg;
  cfg.command = "test";
  cfg.n_perms = 100;
  cfg.trajectory = "masked";  // the supplied prediction is used as is
  const auto report = test_report(data, sim.panel.values(), cfg);
  ASSERT_EQ(report["results"].size(), 6u);
  for (const auto& r : report["results"]) {
    EXPECT_EQ(r["s_observed"].get<double>(), 0.0);
    EXPECT_EQ(r["p_value"].get<double>(), 1.0);
  }
}

TEST(Pipeline, ConfigHashIgnoresThreadsAndOutput) {
  RunConfig a;
  a.command = "fit";
  RunConfig b = a;
  b.threads = 3;
  b.out = "/elsewhere";
  EXPECT_EQ(config_hash(a), config_hash(b));
  b.seed = 1;
  EXPECT_NE(config_hash(a), config_hash(b));
  EXPECT_EQ(config_hash(a).size(), 16u);
}

TEST(Pipeline, ValidationRejectsBadSettings) {
  RunConfig c;
  c.command = "fit";
  c.outcomes = "y.csv";
  EXPECT_NO_THROW(validate(c));
  c.estimator = "ridge";
  EXPECT_THROW(validate(c), Error);
  c.estimator = "did";
  c.schemes = {"sideways"};
  EXPECT_THROW(validate(c), Error);
  c.schemes = {"iid"};
  c.bootstrap = 50;
  EXPECT_THROW(validate(c), Error);
  c.bootstrap = 0;
  c.command = "explode";
  EXPECT_THROW(validate(c), Error);
}

TEST(Pipeline, RerunsAreByteIdentical) {
  const fs::path dir = scratch("determinism");
  RunConfig sim;
  sim.command = "simulate";
  sim.n_units = 14;
  sim.n_periods = 24;
  sim.treated = 4;
  sim.effect = 0.5;
  sim.seed = 3;
  sim.out = (dir / "data").string();
  run_pipeline(sim);

  for (const std::string command : {"fit", "test"}) {
    RunConfig c;
    c.command = command;
    c.outcomes = (dir / "data" / "outcomes.csv").string();
    c.treatment = (dir / "data" / "treatment.csv").string();
    c.n_perms = 100;
    c.bootstrap = 100;
    c.seed = 5;
    c.out = (dir / "a").string();
    const auto first = run_pipeline(c);
    c.out = (dir / "b").string();
    c.threads = 2;
    const auto second = run_pipeline(c);
    ASSERT_EQ(first.size(), second.size());
    for (std::size_t k = 0; k < first.size(); ++k) {
      EXPECT_EQ(slurp(first[k]), slurp(second[k])) << first[k];
    }
  }
  const auto report = nlohmann::json::parse(slurp(dir / "a" / "test.json"));
  EXPECT_EQ(report["seed"], 5);
  EXPECT_EQ(report["n_units"], 14);
  EXPECT_EQ(report["version"], std::string(version()));
  EXPECT_TRUE(report.contains("config_hash"));
}

TEST(Pipeline, SimulateThenPlacebo) {
  const fs::path dir = scratch("sim_placebo");
  RunConfig sim;
  sim.command = "simulate";
  sim.n_units = 12;
  sim.n_periods = 20;
  sim.rank = 2;
  sim.seed = 8;
  sim.out = (dir / "data").string();
  run_pipeline(sim);

  RunConfig c;
  c.command = "placebo";
  c.outcomes = (dir / "data" / "outcomes.csv").string();
  c.estimators = {"mcnnm", "did", "svd"};
  c.ratios = {0.5, 0.75};
  c.trials = 3;
  c.out = (dir / "out").string();
  run_pipeline(c);
  const CsvTable trials = read_csv(dir / "out" / "placebo_trials.csv");
  trials.require_header({"estimator", "ratio", "trial", "rmse"});
  EXPECT_EQ(trials.rows.size(), 3u * 2u * 3u);
  std::map<std::pair<std::string, std::string>, int> per_cell;
  for (const auto& r : trials.rows) ++per_cell[{r[0], r[1]}];
  for (const auto& [key, count] : per_cell) EXPECT_EQ(count, 3);
  const CsvTable summary = read_csv(dir / "out" / "placebo_summary.csv");
  EXPECT_EQ(summary.rows.size(), 6u);
}

TEST(Pipeline, RefitModeCountsMovingBlockShifts) {
  const fs::path dir = scratch("refit");
  RunConfig sim;
  sim.command = "simulate";
  sim.n_units = 10;
  sim.n_periods = 12;
  sim.treated = 3;
  sim.seed = 4;
  sim.out = (dir / "data").string();
  run_pipeline(sim);
  RunConfig c;
  c.command = "test";
  c.outcomes = (dir / "data" / "outcomes.csv").string();
  c.treatment = (dir / "data" / "treatment.csv").string();
  c.estimator = "did";
  c.schemes = {"moving_block"};
  c.q = {1.0};
  c.refit = true;
  c.out = (dir / "out").string();
  run_pipeline(c);
  const auto report = nlohmann::json::parse(slurp(dir / "out" / "test.json"));
  EXPECT_EQ(report["results"][0]["n_permutations"], 11);
  EXPECT_TRUE(report["refit"].get<bool>());
}

TEST(Pipeline, TrajectoryModesDiffer) {
  SyntheticSpec spec;
  spec.n_units = 16;
  spec.n_periods = 24;
  spec.noise_sd = 0.3;
  spec.treated_count = 4;
  spec.seed = 12;
  const auto sim = generate_synthetic_panel(spec);
  Dataset data{sim.panel, sim.plan, CovariateSet::none(16), std::nullopt, {}};
  RunConfig cfg;
  cfg.command = "test";
  cfg.estimator = "did";
  cfg.schemes = {"moving_block"};
  cfg.q = {1.0};
  const Eigen::MatrixXd held = fit_did_binary(sim.panel, sim.mask).y_hat;
  const auto null_report = test_report(data, held, cfg);
  cfg.trajectory = "masked";
  const auto masked_report = test_report(data, held, cfg);
  EXPECT_EQ(null_report["trajectory"], "null_imposed");
  EXPECT_EQ(masked_report["trajectory"], "masked");
  const Eigen::MatrixXd full = fit_did_binary(sim.panel, Mask::none(16, 24)).y_hat;
  const auto effects = compute_effects(sim.panel, full, *sim.plan);
  EXPECT_NEAR(null_report["results"][0]["s_observed"].get<double>(), s_stat(effects.post_window(), 1.0), 1e-12);
  EXPECT_NE(null_report["results"][0]["s_observed"], masked_report["results"][0]["s_observed"]);
  cfg.trajectory = "sideways";
  cfg.outcomes = "y.csv";
  EXPECT_THROW(validate(cfg), Error);
}
