#include "panelcf/inference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include <boost/math/distributions/normal.hpp>

#include "panelcf/parallel.hpp"

namespace panelcf {

EffectSeries compute_effects(const PanelMatrix& panel, const Eigen::MatrixXd& y_hat, const TreatmentPlan& plan,
                             std::optional<Index> pooled_t0, TimeAlignment alignment) {
  const Index t_count = panel.n_periods();
  if (y_hat.rows() != panel.n_units() || y_hat.cols() != t_count) {
    throw Error("prediction matrix does not match the panel");
  }
  if (plan.n_units() != panel.n_units()) throw Error("treatment plan does not match the panel");
  const auto& treated = plan.treated_units();
  if (treated.empty()) throw Error("no treated units");
  const Index q_count = static_cast<Index>(treated.size());

  EffectSeries out;
  if (alignment == TimeAlignment::calendar) {
    out.alpha.resize(q_count, t_count);
    for (Index k = 0; k < q_count; ++k) {
      out.alpha.row(k) = panel.values().row(treated[static_cast<std::size_t>(k)]) -
                         y_hat.row(treated[static_cast<std::size_t>(k)]);
    }
    if (!out.alpha.allFinite()) throw Error("treated deviations must be finite in every period");
    out.alpha_bar = out.alpha.colwise().mean().transpose();
    out.periods = panel.time_ids();
    out.t0_index = pooled_t0.value_or(plan.earliest_adoption());
  } else {
    Index lead = 0;  // max adoption column
    Index lag = 0;   // max periods after adoption
    for (Index i : treated) {
      lead = std::max(lead, *plan.last_observed(i));
      lag = std::max(lag, t_count - 1 - *plan.last_observed(i));
    }
    const Index span = lead + lag + 1;
    constexpr double nan = std::numeric_limits<double>::quiet_NaN();
    out.alpha = Eigen::MatrixXd::Constant(q_count, span, nan);
    for (Index k = 0; k < q_count; ++k) {
      const Index i = treated[static_cast<std::size_t>(k)];
      const Index offset = lead - *plan.last_observed(i);
      out.alpha.row(k).segment(offset, t_count) = panel.values().row(i) - y_hat.row(i);
    }
    out.alpha_bar.resize(span);
    for (Index c = 0; c < span; ++c) {
      double total = 0.0;
      int count = 0;
      for (Index k = 0; k < q_count; ++k) {
        if (std::isfinite(out.alpha(k, c))) {
          total += out.alpha(k, c);
          ++count;
        }
      }
      if (count == 0) throw Error("treated deviations must be finite in every period");
      out.alpha_bar(c) = total / count;
    }
    out.periods.resize(static_cast<std::size_t>(span));
    std::iota(out.periods.begin(), out.periods.end(), static_cast<int>(-lead));
    out.t0_index = pooled_t0.value_or(lead);
  }
  const Index len = out.alpha_bar.size();
  if (out.t0_index < 0 || out.t0_index >= len - 1) throw Error("pooled adoption leaves no post-period");
  out.post_length = len - out.t0_index - 1;
  return out;
}

double s_stat(std::span<const double> window, double q) {
  if (window.empty()) throw Error("s_stat: empty window");
  if (!(q > 0.0)) throw Error("s_stat: q must be positive");
  double total = 0.0;
  for (double a : window) total += std::pow(std::abs(a), q);
  return std::pow(total / std::sqrt(static_cast<double>(window.size())), q);
}

double s_stat(const Eigen::VectorXd& window, double q) {
  return s_stat(std::span<const double>(window.data(), static_cast<std::size_t>(window.size())), q);
}

std::string_view scheme_name(Scheme scheme) {
  switch (scheme) {
    case Scheme::iid:
      return "iid";
    case Scheme::iid_block:
      return "iid_block";
    case Scheme::moving_block:
      return "moving_block";
  }
  return "unknown";
}

std::optional<Scheme> parse_scheme(std::string_view name) {
  for (Scheme s : {Scheme::iid, Scheme::iid_block, Scheme::moving_block}) {
    if (scheme_name(s) == name) return s;
  }
  if (name == "iid-block") return Scheme::iid_block;
  if (name == "moving-block") return Scheme::moving_block;
  return std::nullopt;
}

std::vector<std::vector<Index>> permutations(Index n_periods, const PermutationOptions& options,
                                             Index block_length) {
  std::vector<std::vector<Index>> out;
  std::vector<Index> identity(static_cast<std::size_t>(n_periods));
  std::iota(identity.begin(), identity.end(), Index{0});
  switch (options.scheme) {
    case Scheme::moving_block:
      for (Index shift = 1; shift < n_periods; ++shift) {
        std::vector<Index> p(identity.size());
        for (Index t = 0; t < n_periods; ++t) p[static_cast<std::size_t>(t)] = (t + shift) % n_periods;
        out.push_back(std::move(p));
      }
      break;
    case Scheme::iid:
      if (options.n_permutations < 1) throw Error("n_permutations must be at least 1");
      for (int k = 0; k < options.n_permutations; ++k) {
        std::mt19937_64 rng(task_seed(options.seed, static_cast<std::uint64_t>(k)));
        std::vector<Index> p = identity;
        std::shuffle(p.begin(), p.end(), rng);
        out.push_back(std::move(p));
      }
      break;
    case Scheme::iid_block: {
      if (options.n_permutations < 1) throw Error("n_permutations must be at least 1");
      if (block_length < 1 || block_length > n_periods) throw Error("block length must lie in [1, T]");
      // the last block is shorter when T is not a multiple of the block length
      std::vector<std::pair<Index, Index>> blocks;
      for (Index start = 0; start < n_periods; start += block_length) {
        blocks.emplace_back(start, std::min(block_length, n_periods - start));
      }
      for (int k = 0; k < options.n_permutations; ++k) {
        std::mt19937_64 rng(task_seed(options.seed, static_cast<std::uint64_t>(k)));
        auto order = blocks;
        std::shuffle(order.begin(), order.end(), rng);
        std::vector<Index> p;
        p.reserve(identity.size());
        for (auto [start, len] : order) {
          for (Index t = start; t < start + len; ++t) p.push_back(t);
        }
        out.push_back(std::move(p));
      }
      break;
    }
  }
  return out;
}

TestResult permutation_test(const Eigen::VectorXd& trajectory, Index post_length, const PermutationOptions& options) {
  const Index t_count = trajectory.size();
  if (post_length < 1 || post_length >= t_count) throw Error("post window must leave at least one pre-period");
  if (!trajectory.allFinite()) throw Error("trajectory must be finite");
  Eigen::VectorXd null = Eigen::VectorXd::Zero(post_length);
  if (options.null_trajectory) {
    if (options.null_trajectory->size() != post_length) throw Error("null trajectory length differs from the post window");
    null = *options.null_trajectory;
  }

  TestResult result;
  result.scheme = options.scheme;
  result.q = options.q;
  Index block = 0;
  if (options.scheme == Scheme::iid_block) {
    block = options.block_length ? *options.block_length : optimal_block_length(trajectory);
    if (block > t_count) throw Error("block length exceeds the series length");
    result.block_length = block;
  }
  const Index start = t_count - post_length;
  result.s_observed = s_stat(Eigen::VectorXd(trajectory.tail(post_length) - null), options.q);

  const auto perms = permutations(t_count, options, block);
  if (perms.empty()) throw Error("no permutations to evaluate");
  std::size_t below = 0;
  Eigen::VectorXd window(post_length);
  for (const auto& p : perms) {
    for (Index t = 0; t < post_length; ++t) {
      window(t) = trajectory(p[static_cast<std::size_t>(start + t)]) - null(t);
    }
    if (s_stat(window, options.q) < result.s_observed) ++below;
  }
  result.n_permutations = static_cast<int>(perms.size());
  result.p_value = static_cast<double>(perms.size() - below) / static_cast<double>(perms.size());
  return result;
}

TestResult permutation_test(const EffectSeries& effects, const PermutationOptions& options) {
  return permutation_test(effects.alpha_bar, effects.post_length, options);
}

BootstrapBand block_bootstrap_band(const Eigen::MatrixXd& alpha, int replicates, double level, std::uint64_t seed,
                                   std::optional<Index> block_length) {
  if (replicates < 100) throw Error("block bootstrap needs at least 100 replicates");
  if (!(level > 0.0 && level < 1.0)) throw Error("confidence level must lie in (0, 1)");
  if (alpha.rows() < 1 || alpha.cols() < 2) throw Error("block bootstrap needs a nonempty deviation matrix");
  if (!alpha.allFinite()) throw Error("deviations must be finite");
  const Index t_count = alpha.cols();

  BootstrapBand band;
  band.level = level;
  band.replicates = replicates;
  band.point = alpha.colwise().mean().transpose();
  band.block_length = block_length ? *block_length : optimal_block_length(band.point);
  if (band.block_length < 1 || band.block_length > t_count) throw Error("block length must lie in [1, T]");

  const auto b_count = static_cast<std::size_t>(replicates);
  Eigen::MatrixXd draws(t_count, replicates);
  parallel_for(b_count, [&](std::size_t b) {
    std::mt19937_64 rng(task_seed(seed, b));
    std::uniform_int_distribution<Index> start(0, t_count - 1);
    Index filled = 0;
    while (filled < t_count) {
      const Index s = start(rng);
      for (Index k = 0; k < band.block_length && filled < t_count; ++k, ++filled) {
        draws(filled, static_cast<Index>(b)) = band.point((s + k) % t_count);
      }
    }
  });
  const Eigen::VectorXd mean = draws.rowwise().mean();
  band.se = ((draws.colwise() - mean).array().square().rowwise().sum() / (replicates - 1.0)).sqrt().matrix();
  const boost::math::normal_distribution<double> normal;
  const double z = boost::math::quantile(normal, 0.5 + level / 2.0);
  band.ci_low = band.point - z * band.se;
  band.ci_high = band.point + z * band.se;
  return band;
}

nlohmann::json to_json(const TestResult& result) {
  nlohmann::json j{{"scheme", scheme_name(result.scheme)},
                   {"q", result.q},
                   {"s_observed", result.s_observed},
                   {"p_value", result.p_value},
                   {"n_permutations", result.n_permutations}};
  if (result.scheme == Scheme::iid_block) j["block_length"] = result.block_length;
  return j;
}

}  // namespace panelcf
