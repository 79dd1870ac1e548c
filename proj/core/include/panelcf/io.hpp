#pragma once

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <cstddef>
#include <filesystem>
#include <initializer_list>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "panelcf/panel.hpp"

namespace panelcf {

// ---------------------------------------------------------------------------
// CSV

/// Parsed CSV with the source line of every data row. Blank lines and lines
/// starting with '#' are skipped.
struct CsvTable {
  std::string source;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> lines;

  /// Throws naming the first column that differs from `expected`.
  void require_header(std::initializer_list<std::string_view> expected) const;

  double number(std::size_t row, std::size_t col) const;
  std::optional<double> optional_number(std::size_t row, std::size_t col) const;  // "", "NA", "nan" -> none
  int integer(std::size_t row, std::size_t col) const;
  std::string location(std::size_t row) const;  // "file:line"
};

CsvTable parse_csv(std::string_view text, std::string source = "<memory>");
CsvTable read_csv(const std::filesystem::path& path);

/// Shortest round-trip decimal representation; "nan" and "inf" otherwise.
std::string format_number(double value);

/// Quotes fields containing separators, quotes or leading '#'.
std::string csv_field(std::string_view value);

// ---------------------------------------------------------------------------
// Dataset ingestion

struct DatasetPaths {
  std::filesystem::path outcomes;  // unit,time,value
  std::optional<std::filesystem::path> covariates;  // unit,name,value or unit,time,name,value
  std::optional<std::filesystem::path> treatment;   // unit,t0 (first exposed period)
  std::optional<std::filesystem::path> intensity;   // unit,time,intensity
  std::optional<std::filesystem::path> deflator;    // time,value
  std::optional<std::filesystem::path> population;  // unit,time,value
};

struct ValidationReport {
  Index n_units = 0;
  Index n_periods = 0;
  Index treated_units = 0;
  std::vector<std::string> dropped_units;  // zero pre-period variance
  std::size_t imputed_cells = 0;           // filled by LOCF / NOCB
  std::vector<std::string> warnings;
};

struct Dataset {
  PanelMatrix panel;
  std::optional<TreatmentPlan> plan;
  CovariateSet covariates;
  std::optional<Eigen::MatrixXd> intensity;  // N x T
  ValidationReport report;
};

/// Reads and preprocesses a dataset. When a treatment file is given and no
/// split is set, the pre regime ends just before the earliest adoption.
Dataset ingest(const DatasetPaths& paths, PreprocessConfig preprocess_config = {});

// Writers. `comments` lines are emitted first, each prefixed with "# ".

void write_outcomes(std::ostream& out, const PanelMatrix& panel, const std::vector<std::string>& comments = {});
void write_treatment(std::ostream& out, const PanelMatrix& panel, const TreatmentPlan& plan,
                     const std::vector<std::string>& comments = {});
void write_intensity(std::ostream& out, const PanelMatrix& panel, const Eigen::MatrixXd& intensity,
                     const std::vector<std::string>& comments = {});
void write_unit_covariates(std::ostream& out, const PanelMatrix& panel, const Eigen::MatrixXd& values,
                           const std::vector<std::string>& names, const std::vector<std::string>& comments = {});

nlohmann::json to_json(const ValidationReport& report);

/// Writes `text` to `path` only through a complete temporary file.
void write_file(const std::filesystem::path& path, std::string_view text);

}  // namespace panelcf
