#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "cv_folds.hpp"
#include "panelcf/baseline.hpp"
#include "panelcf/parallel.hpp"

namespace panelcf {
namespace {

enum class Variant { pca, svd };

Eigen::MatrixXd initial_fill(const Eigen::MatrixXd& y, const BoolArray& missing,
                             const std::optional<std::uint64_t>& seed) {
  Eigen::MatrixXd z = y;
  const BoolArray observed = !missing;
  const Index n_obs = observed.count();
  if (n_obs == 0) throw Error("no observed cells to impute from");
  const double overall = observed.select(y.array(), 0.0).sum() / static_cast<double>(n_obs);
  std::mt19937_64 rng(seed.value_or(0));
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Index t = 0; t < y.cols(); ++t) {
    const Index count = observed.col(t).count();
    const double mean = count > 0 ? observed.col(t).select(y.col(t).array(), 0.0).sum() / static_cast<double>(count)
                                  : overall;
    double sd = 0.0;
    if (count > 1) {
      sd = std::sqrt(observed.col(t).select((y.col(t).array() - mean).square(), 0.0).sum() /
                     static_cast<double>(count - 1));
    }
    for (Index i = 0; i < y.rows(); ++i) {
      if (!missing(i, t)) continue;
      z(i, t) = seed ? mean + sd * normal(rng) : mean;
    }
  }
  return z;
}

// Rank-r reconstruction of the completed matrix.
Eigen::MatrixXd reconstruct(const Eigen::MatrixXd& z, Index rank, Variant variant) {
  Eigen::RowVectorXd center = Eigen::RowVectorXd::Zero(z.cols());
  if (variant == Variant::pca) center = z.colwise().mean();
  const Eigen::MatrixXd centered = z.rowwise() - center;
  Eigen::BDCSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::VectorXd& s = svd.singularValues();
  const Index r = std::min<Index>(rank, s.size());
  Eigen::VectorXd kept = s.head(r);
  if (variant == Variant::pca) {
    // noise variance from the discarded components shrinks the kept ones
    const Index dof = z.cols() - r;
    const double noise = dof > 0 ? s.tail(s.size() - r).squaredNorm() / static_cast<double>(dof) : 0.0;
    for (Index k = 0; k < r; ++k) {
      kept(k) = s(k) > 0.0 ? std::max(0.0, s(k) - noise / s(k)) : 0.0;
    }
  }
  Eigen::MatrixXd out = svd.matrixU().leftCols(r) * kept.asDiagonal() * svd.matrixV().leftCols(r).transpose();
  return out.rowwise() + center;
}

BaselineFit fit_low_rank(const PanelMatrix& panel, const Mask& mask, const LowRankOptions& options, Variant variant) {
  if (mask.rows() != panel.n_units() || mask.cols() != panel.n_periods()) {
    throw Error("mask shape does not match the panel");
  }
  const Index max_rank = std::min(panel.n_units(), panel.n_periods());
  if (options.rank < 1 || options.rank > max_rank) {
    throw Error("rank must lie in [1, " + std::to_string(max_rank) + "]");
  }
  const BoolArray& missing = mask.missing();
  Eigen::MatrixXd z = initial_fill(panel.values(), missing, options.init_seed);
  if (!missing.select(0.0, z.array()).allFinite()) throw Error("observed cells must be finite");

  Eigen::MatrixXd recon;
  int iterations = 0;
  bool converged = false;
  double last_change = 0.0;
  const bool any_missing = missing.any();
  for (int iter = 0; iter < options.max_iter; ++iter) {
    recon = reconstruct(z, options.rank, variant);
    iterations = iter + 1;
    if (!any_missing) {
      converged = true;
      break;
    }
    const Eigen::MatrixXd next = missing.select(recon.array(), z.array()).matrix();
    last_change = (next - z).norm() / std::max(z.norm(), std::numeric_limits<double>::min());
    z = next;
    if (last_change <= options.tol) {
      converged = true;
      recon = reconstruct(z, options.rank, variant);
      break;
    }
  }

  BaselineFit fit;
  fit.method = variant == Variant::pca ? Method::pca : Method::svd;
  fit.y_hat = std::move(recon);
  fit.diagnostics = {{"rank", options.rank},
                     {"iterations", iterations},
                     {"converged", converged},
                     {"last_change", last_change}};
  return fit;
}

}  // namespace

BaselineFit fit_pca_iterative(const PanelMatrix& panel, const Mask& mask, const LowRankOptions& options) {
  return fit_low_rank(panel, mask, options, Variant::pca);
}

BaselineFit fit_svd_em(const PanelMatrix& panel, const Mask& mask, const LowRankOptions& options) {
  return fit_low_rank(panel, mask, options, Variant::svd);
}

Index select_rank_cv(const PanelMatrix& panel, const Mask& mask, Method method, Index max_rank, int n_folds,
                     std::uint64_t seed) {
  if (method != Method::pca && method != Method::svd) throw Error("rank selection applies to PCA or SVD only");
  max_rank = std::min(max_rank, std::min(panel.n_units(), panel.n_periods()) - 1);
  if (max_rank < 1) throw Error("panel too small for rank selection");
  const std::vector<BoolArray> held = detail::trailing_block_folds(mask, n_folds, seed);
  const Variant variant = method == Method::pca ? Variant::pca : Variant::svd;

  std::vector<double> error(static_cast<std::size_t>(max_rank), 0.0);
  std::vector<std::vector<double>> per_fold(held.size());
  parallel_for(held.size(), [&](std::size_t k) {
    const Mask fold_mask = mask.merged(Mask(held[k]));
    std::vector<double> e;
    for (Index r = 1; r <= max_rank; ++r) {
      const BaselineFit fit = fit_low_rank(panel, fold_mask, {r, 500, 1e-6, std::nullopt}, variant);
      e.push_back(held[k].select((panel.values() - fit.y_hat).array().square(), 0.0).sum());
    }
    per_fold[k] = std::move(e);
  });
  for (const auto& e : per_fold) {
    for (std::size_t r = 0; r < e.size(); ++r) error[r] += e[r];
  }
  return static_cast<Index>(std::min_element(error.begin(), error.end()) - error.begin()) + 1;
}

}  // namespace panelcf
