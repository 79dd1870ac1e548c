#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <unordered_map>

#include "panelcf/panel.hpp"

namespace panelcf {

std::size_t fill_locf_nocb(std::span<double> series) {
  std::size_t filled = 0;
  std::optional<double> last;
  for (double& v : series) {
    if (std::isnan(v)) {
      if (last) {
        v = *last;
        ++filled;
      }
    } else {
      last = v;
    }
  }
  if (!last) throw Error("series has no observed values");
  // leading gap: carry the first observation backward
  auto first = std::find_if(series.begin(), series.end(), [](double v) { return !std::isnan(v); });
  for (auto it = series.begin(); it != first; ++it) {
    *it = *first;
    ++filled;
  }
  return filled;
}

PreprocessResult preprocess(std::span<const RawRecord> raw, const PreprocessConfig& config) {
  if (raw.empty()) throw Error("preprocess: no records");

  std::vector<std::string> units;
  std::unordered_map<std::string, Index> unit_pos;
  std::set<int> time_set;
  for (const auto& r : raw) {
    if (unit_pos.emplace(r.unit, static_cast<Index>(units.size())).second) units.push_back(r.unit);
    time_set.insert(r.time);
  }
  std::vector<int> times(time_set.begin(), time_set.end());
  const Index n = static_cast<Index>(units.size());
  const Index t_count = static_cast<Index>(times.size());
  auto time_col = [&](int t) {
    return static_cast<Index>(std::lower_bound(times.begin(), times.end(), t) - times.begin());
  };

  constexpr double nan = std::numeric_limits<double>::quiet_NaN();
  Eigen::MatrixXd y = Eigen::MatrixXd::Constant(n, t_count, nan);
  BoolArray seen = BoolArray::Constant(n, t_count, false);
  for (const auto& r : raw) {
    const Index i = unit_pos.at(r.unit);
    const Index t = time_col(r.time);
    if (seen(i, t)) {
      throw Error("duplicate record for unit '" + r.unit + "' at time " + std::to_string(r.time));
    }
    seen(i, t) = true;
    if (!r.value) continue;
    double v = *r.value;
    if (!config.deflator.empty()) {
      auto it = config.deflator.find(r.time);
      if (it == config.deflator.end()) throw Error("deflator missing for time " + std::to_string(r.time));
      if (!(it->second > 0.0)) throw Error("deflator must be positive at time " + std::to_string(r.time));
      v /= it->second;
    }
    if (!config.population.empty()) {
      auto it = config.population.find({r.unit, r.time});
      if (it == config.population.end()) {
        throw Error("population missing for unit '" + r.unit + "' at time " + std::to_string(r.time));
      }
      if (!(it->second > 0.0)) {
        throw Error("population must be positive for unit '" + r.unit + "' at time " +
                    std::to_string(r.time));
      }
      v /= it->second;
    }
    if (config.log_transform) {
      if (!(v > 0.0)) {
        throw Error("nonpositive value for unit '" + r.unit + "' at time " + std::to_string(r.time) +
                    " under log transform");
      }
      v = std::log(v);
    }
    y(i, t) = v;
  }

  // pre regime: times <= split_time; everything when no split is given
  Index pre_len = t_count;
  if (config.split_time) {
    pre_len = static_cast<Index>(std::upper_bound(times.begin(), times.end(), *config.split_time) - times.begin());
  }

  std::size_t imputed = 0;
  for (Index i = 0; i < n; ++i) {
    Eigen::VectorXd row = y.row(i).transpose();
    const std::pair<Index, Index> regimes[] = {{0, pre_len}, {pre_len, t_count - pre_len}};
    for (auto [start, len] : regimes) {
      if (len == 0) continue;
      try {
        imputed += fill_locf_nocb(std::span<double>(row.data() + start, static_cast<std::size_t>(len)));
      } catch (const Error&) {
        throw Error("unit '" + units[static_cast<std::size_t>(i)] + "' has no observations in the " +
                    (start == 0 ? "pre" : "post") + " regime");
      }
    }
    y.row(i) = row.transpose();
  }

  std::vector<Index> keep;
  std::vector<std::string> dropped;
  for (Index i = 0; i < n; ++i) {
    const auto pre = y.row(i).head(pre_len);
    if (pre.maxCoeff() == pre.minCoeff()) {
      dropped.push_back(units[static_cast<std::size_t>(i)]);
    } else {
      keep.push_back(i);
    }
  }
  if (keep.size() < 2) throw Error("fewer than 2 units remain after removing zero-variance units");

  Eigen::MatrixXd out(static_cast<Index>(keep.size()), t_count);
  std::vector<std::string> kept_ids;
  for (std::size_t k = 0; k < keep.size(); ++k) {
    out.row(static_cast<Index>(k)) = y.row(keep[k]);
    kept_ids.push_back(units[static_cast<std::size_t>(keep[k])]);
  }
  return PreprocessResult{PanelMatrix(std::move(out), std::move(kept_ids), std::move(times)),
                          std::move(dropped), imputed};
}

}  // namespace panelcf
