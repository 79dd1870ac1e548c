#include <algorithm>
#include <cmath>
#include <vector>

#include "panelcf/inference.hpp"

namespace panelcf {

// Politis-White selector with the Patton-Politis-White correction,
// circular-bootstrap constant D = (4/3) g(0)^2.
Index optimal_block_length(std::span<const double> series) {
  const auto n = static_cast<Index>(series.size());
  if (n < 10) throw Error("optimal block length needs at least 10 observations");
  const double nd = static_cast<double>(n);
  double mean = 0.0;
  for (double v : series) mean += v;
  mean /= nd;
  std::vector<double> e(series.begin(), series.end());
  for (double& v : e) v -= mean;

  const Index cap = static_cast<Index>(std::ceil(nd / 3.0));
  double variance = 0.0;
  for (double v : e) variance += v * v;
  if (!(variance > 1e-300)) return 1;

  const Index kn = std::max<Index>(5, static_cast<Index>(std::sqrt(std::log10(nd))));
  const Index m_max = static_cast<Index>(std::ceil(std::sqrt(nd))) + kn;
  const double critical = 2.0 * std::sqrt(std::log10(nd) / nd);

  auto autocov = [&](Index lag) {
    double s = 0.0;
    for (Index t = lag; t < n; ++t) s += e[static_cast<std::size_t>(t)] * e[static_cast<std::size_t>(t - lag)];
    return s / nd;
  };
  std::vector<double> acv(static_cast<std::size_t>(m_max + 1));
  std::vector<double> acorr(static_cast<std::size_t>(m_max + 1));
  for (Index lag = 0; lag <= m_max && lag < n; ++lag) {
    acv[static_cast<std::size_t>(lag)] = autocov(lag);
    acorr[static_cast<std::size_t>(lag)] = std::abs(acv[static_cast<std::size_t>(lag)]) / acv[0];
  }

  // first lag m after which kn consecutive autocorrelations are insignificant
  std::optional<Index> first_quiet;
  for (Index m = 1; m + kn <= m_max; ++m) {
    bool quiet = true;
    for (Index k = 0; k < kn && quiet; ++k) quiet = acorr[static_cast<std::size_t>(m + k)] < critical;
    if (quiet) {
      first_quiet = m - 1;
      break;
    }
  }
  Index bandwidth = first_quiet ? 2 * std::max<Index>(*first_quiet, 1) : m_max;
  bandwidth = std::min(bandwidth, m_max);

  double g = 0.0;
  double long_run = acv[0];
  for (Index k = 1; k <= bandwidth; ++k) {
    const double ratio = static_cast<double>(k) / static_cast<double>(bandwidth);
    const double weight = ratio <= 0.5 ? 1.0 : 2.0 * (1.0 - ratio);  // flat-top kernel
    g += 2.0 * weight * static_cast<double>(k) * acv[static_cast<std::size_t>(k)];
    long_run += 2.0 * weight * acv[static_cast<std::size_t>(k)];
  }
  const double d_circular = 4.0 / 3.0 * long_run * long_run;
  if (!(d_circular > 0.0)) return 1;
  const double b = std::cbrt(2.0 * g * g / d_circular) * std::cbrt(nd);
  const auto rounded = static_cast<Index>(std::lround(b));
  return std::clamp<Index>(rounded, 1, std::max<Index>(1, cap));
}

Index optimal_block_length(const Eigen::VectorXd& series) {
  return optimal_block_length(std::span<const double>(series.data(), static_cast<std::size_t>(series.size())));
}

}  // namespace panelcf
