#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "panelcf/io.hpp"

namespace panelcf {
namespace {

void emit_comments(std::ostream& out, const std::vector<std::string>& comments) {
  for (const auto& c : comments) out << "# " << c << '\n';
}

struct UnitLookup {
  const PanelMatrix& panel;
  const std::set<std::string>& dropped;

  // nullopt for a dropped unit; throws for a unit never seen in the outcomes
  std::optional<Index> operator()(const CsvTable& table, std::size_t row) const {
    const std::string& unit = table.rows[row][0];
    if (auto idx = panel.unit_index(unit)) return idx;
    if (dropped.count(unit)) return std::nullopt;
    throw Error(table.location(row) + ": unit '" + unit + "' does not appear in the outcomes");
  }
};

Index time_column(const PanelMatrix& panel, const CsvTable& table, std::size_t row, std::size_t col) {
  const int t = table.integer(row, col);
  auto idx = panel.time_index(t);
  if (!idx) throw Error(table.location(row) + ": time " + std::to_string(t) + " is not an outcome period");
  return *idx;
}

}  // namespace

Dataset ingest(const DatasetPaths& paths, PreprocessConfig config) {
  const CsvTable outcomes = read_csv(paths.outcomes);
  outcomes.require_header({"unit", "time", "value"});
  if (outcomes.rows.empty()) throw Error(outcomes.source + ": no data rows");

  std::vector<RawRecord> raw;
  raw.reserve(outcomes.rows.size());
  std::map<std::pair<std::string, int>, std::size_t> first_line;
  std::set<int> times;
  for (std::size_t r = 0; r < outcomes.rows.size(); ++r) {
    RawRecord rec{outcomes.rows[r][0], outcomes.integer(r, 1), outcomes.optional_number(r, 2)};
    if (rec.unit.empty()) throw Error(outcomes.location(r) + ": column 'unit' is empty");
    auto [it, fresh] = first_line.emplace(std::make_pair(rec.unit, rec.time), outcomes.lines[r]);
    if (!fresh) {
      throw Error(outcomes.location(r) + ": duplicate row for unit '" + rec.unit + "' at time " +
                  std::to_string(rec.time) + " (first seen on line " + std::to_string(it->second) + ")");
    }
    times.insert(rec.time);
    raw.push_back(std::move(rec));
  }

  std::set<std::string> outcome_units;
  for (const auto& rec : raw) outcome_units.insert(rec.unit);

  // treatment file is read before preprocessing to fix the pre regime
  std::map<std::string, int> adoption;
  std::optional<CsvTable> treatment;
  if (paths.treatment) {
    treatment = read_csv(*paths.treatment);
    treatment->require_header({"unit", "t0"});
    for (std::size_t r = 0; r < treatment->rows.size(); ++r) {
      const std::string& unit = treatment->rows[r][0];
      if (!outcome_units.count(unit)) {
        throw Error(treatment->location(r) + ": treated unit '" + unit + "' is absent from the outcomes");
      }
      const int t0 = treatment->integer(r, 1);
      if (!times.count(t0)) {
        throw Error(treatment->location(r) + ": t0 " + std::to_string(t0) + " is not an outcome period");
      }
      if (!adoption.emplace(unit, t0).second) {
        throw Error(treatment->location(r) + ": duplicate treatment row for unit '" + unit + "'");
      }
    }
    if (adoption.empty()) throw Error(treatment->source + ": no treated units");
    if (!config.split_time) {
      int earliest = adoption.begin()->second;
      for (const auto& [u, t] : adoption) earliest = std::min(earliest, t);
      auto it = times.find(earliest);
      if (it == times.begin()) throw Error("earliest adoption leaves no pre-treatment period");
      config.split_time = *std::prev(it);
    }
  }

  if (paths.deflator) {
    const CsvTable d = read_csv(*paths.deflator);
    d.require_header({"time", "value"});
    for (std::size_t r = 0; r < d.rows.size(); ++r) {
      if (!config.deflator.emplace(d.integer(r, 0), d.number(r, 1)).second) {
        throw Error(d.location(r) + ": duplicate deflator time");
      }
    }
  }
  if (paths.population) {
    const CsvTable p = read_csv(*paths.population);
    p.require_header({"unit", "time", "value"});
    for (std::size_t r = 0; r < p.rows.size(); ++r) {
      if (!config.population.emplace(std::make_pair(p.rows[r][0], p.integer(r, 1)), p.number(r, 2)).second) {
        throw Error(p.location(r) + ": duplicate population row");
      }
    }
  }

  PreprocessResult pre = preprocess(raw, config);
  const PanelMatrix& panel = pre.panel;
  const Index n = panel.n_units();
  const Index t_count = panel.n_periods();
  const std::set<std::string> dropped(pre.dropped_units.begin(), pre.dropped_units.end());
  const UnitLookup lookup{panel, dropped};

  ValidationReport report;
  report.n_units = n;
  report.n_periods = t_count;
  report.dropped_units = pre.dropped_units;
  report.imputed_cells = pre.imputed_cells;

  std::optional<TreatmentPlan> plan;
  if (treatment) {
    std::vector<std::optional<Index>> last(static_cast<std::size_t>(n));
    for (const auto& [unit, t0] : adoption) {
      auto idx = panel.unit_index(unit);
      if (!idx) {
        report.warnings.push_back("treated unit '" + unit + "' dropped for zero pre-period variance");
        continue;
      }
      // t0 is the first exposed period; the plan stores the last untreated column
      const Index col = *panel.time_index(t0);
      if (col < 2) {
        throw Error("treated unit '" + unit + "' needs at least 2 pre-treatment periods before t0 " +
                    std::to_string(t0));
      }
      last[static_cast<std::size_t>(*idx)] = col - 1;
    }
    plan.emplace(std::move(last));
    report.treated_units = plan->treated_count();
  }

  CovariateSet covariates = CovariateSet::none(n);
  if (paths.covariates) {
    const CsvTable c = read_csv(*paths.covariates);
    const bool timed = c.header.size() == 4;
    if (timed) {
      c.require_header({"unit", "time", "name", "value"});
    } else {
      c.require_header({"unit", "name", "value"});
    }
    const std::size_t name_col = timed ? 2 : 1;
    std::vector<std::string> names;
    std::map<std::string, std::size_t> name_pos;
    for (std::size_t r = 0; r < c.rows.size(); ++r) {
      const std::string& name = c.rows[r][name_col];
      if (name.empty()) throw Error(c.location(r) + ": column 'name' is empty");
      if (name_pos.emplace(name, names.size()).second) names.push_back(name);
    }
    constexpr double nan = std::numeric_limits<double>::quiet_NaN();
    if (timed) {
      std::vector<Eigen::MatrixXd> mats(names.size(), Eigen::MatrixXd::Constant(n, t_count, nan));
      for (std::size_t r = 0; r < c.rows.size(); ++r) {
        auto i = lookup(c, r);
        if (!i) continue;
        const Index t = time_column(panel, c, r, 1);
        double& cell = mats[name_pos.at(c.rows[r][2])](*i, t);
        if (!std::isnan(cell)) throw Error(c.location(r) + ": duplicate covariate row");
        cell = c.number(r, 3);
      }
      for (std::size_t k = 0; k < names.size(); ++k) {
        if (!mats[k].allFinite()) {
          throw Error(c.source + ": covariate '" + names[k] + "' is missing cells or not finite");
        }
      }
      covariates.unit_time = std::move(mats);
      covariates.unit_time_names = std::move(names);
    } else {
      Eigen::MatrixXd raw_cov = Eigen::MatrixXd::Constant(n, static_cast<Index>(names.size()), nan);
      for (std::size_t r = 0; r < c.rows.size(); ++r) {
        auto i = lookup(c, r);
        if (!i) continue;
        double& cell = raw_cov(*i, static_cast<Index>(name_pos.at(c.rows[r][1])));
        if (!std::isnan(cell)) throw Error(c.location(r) + ": duplicate covariate row");
        cell = c.number(r, 2);
      }
      for (std::size_t k = 0; k < names.size(); ++k) {
        if (!raw_cov.col(static_cast<Index>(k)).allFinite()) {
          throw Error(c.source + ": covariate '" + names[k] + "' is missing for some unit");
        }
      }
      covariates = CovariateSet::normalized(raw_cov, std::move(names));
      for (const auto& w : covariates.warnings) report.warnings.push_back(w);
    }
  }

  std::optional<Eigen::MatrixXd> intensity;
  if (paths.intensity) {
    const CsvTable h = read_csv(*paths.intensity);
    h.require_header({"unit", "time", "intensity"});
    Eigen::MatrixXd m = Eigen::MatrixXd::Constant(n, t_count, std::numeric_limits<double>::quiet_NaN());
    for (std::size_t r = 0; r < h.rows.size(); ++r) {
      auto i = lookup(h, r);
      if (!i) continue;
      const Index t = time_column(panel, h, r, 1);
      if (!std::isnan(m(*i, t))) throw Error(h.location(r) + ": duplicate intensity row");
      m(*i, t) = h.number(r, 2);
    }
    for (Index i = 0; i < n; ++i) {
      for (Index t = 0; t < t_count; ++t) {
        if (std::isnan(m(i, t))) {
          throw Error(h.source + ": no intensity for unit '" + panel.unit_ids()[static_cast<std::size_t>(i)] +
                      "' at time " + std::to_string(panel.time_ids()[static_cast<std::size_t>(t)]));
        }
      }
    }
    intensity = std::move(m);
  }

  return Dataset{panel, std::move(plan), std::move(covariates), std::move(intensity), std::move(report)};
}

void write_outcomes(std::ostream& out, const PanelMatrix& panel, const std::vector<std::string>& comments) {
  emit_comments(out, comments);
  out << "unit,time,value\n";
  for (Index i = 0; i < panel.n_units(); ++i) {
    for (Index t = 0; t < panel.n_periods(); ++t) {
      out << csv_field(panel.unit_ids()[static_cast<std::size_t>(i)]) << ','
          << panel.time_ids()[static_cast<std::size_t>(t)] << ',' << format_number(panel.values()(i, t)) << '\n';
    }
  }
}

void write_treatment(std::ostream& out, const PanelMatrix& panel, const TreatmentPlan& plan,
                     const std::vector<std::string>& comments) {
  if (plan.n_units() != panel.n_units()) throw Error("treatment plan does not match the panel");
  emit_comments(out, comments);
  out << "unit,t0\n";
  for (Index i : plan.treated_units()) {
    const Index first_exposed = *plan.last_observed(i) + 1;
    out << csv_field(panel.unit_ids()[static_cast<std::size_t>(i)]) << ','
        << panel.time_ids()[static_cast<std::size_t>(first_exposed)] << '\n';
  }
}

void write_intensity(std::ostream& out, const PanelMatrix& panel, const Eigen::MatrixXd& intensity,
                     const std::vector<std::string>& comments) {
  if (intensity.rows() != panel.n_units() || intensity.cols() != panel.n_periods()) {
    throw Error("intensity does not match the panel");
  }
  emit_comments(out, comments);
  out << "unit,time,intensity\n";
  for (Index i = 0; i < panel.n_units(); ++i) {
    for (Index t = 0; t < panel.n_periods(); ++t) {
      out << csv_field(panel.unit_ids()[static_cast<std::size_t>(i)]) << ','
          << panel.time_ids()[static_cast<std::size_t>(t)] << ',' << format_number(intensity(i, t)) << '\n';
    }
  }
}

void write_unit_covariates(std::ostream& out, const PanelMatrix& panel, const Eigen::MatrixXd& values,
                           const std::vector<std::string>& names, const std::vector<std::string>& comments) {
  if (values.rows() != panel.n_units() || values.cols() != static_cast<Index>(names.size())) {
    throw Error("covariates do not match the panel");
  }
  emit_comments(out, comments);
  out << "unit,name,value\n";
  for (Index i = 0; i < panel.n_units(); ++i) {
    for (Index k = 0; k < values.cols(); ++k) {
      out << csv_field(panel.unit_ids()[static_cast<std::size_t>(i)]) << ','
          << csv_field(names[static_cast<std::size_t>(k)]) << ',' << format_number(values(i, k)) << '\n';
    }
  }
}

nlohmann::json to_json(const ValidationReport& report) {
  return {{"n_units", report.n_units},
          {"n_periods", report.n_periods},
          {"treated_units", report.treated_units},
          {"dropped_units", report.dropped_units},
          {"imputed_cells", report.imputed_cells},
          {"warnings", report.warnings}};
}

}  // namespace panelcf
