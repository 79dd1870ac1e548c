#include "two_way.hpp"

#include <queue>
#include <string>
#include <vector>

namespace panelcf::detail {

TwoWaySolver::TwoWaySolver(const BoolArray& observed) : observed_(observed) {
  const Index n = observed.rows();
  const Index t_count = observed.cols();
  for (Index i = 0; i < n; ++i) {
    if (!observed.row(i).any()) throw Error("unit " + std::to_string(i) + " has no observed periods");
  }
  for (Index t = 0; t < t_count; ++t) {
    if (!observed.col(t).any()) {
      throw Error("rank-deficient design: period " + std::to_string(t) + " has no observed cells");
    }
  }
  // unit/time bipartite graph must be connected for the effects to be identified
  std::vector<char> seen(static_cast<std::size_t>(n + t_count), 0);
  std::queue<Index> q;
  q.push(0);
  seen[0] = 1;
  Index reached = 1;
  while (!q.empty()) {
    const Index v = q.front();
    q.pop();
    if (v < n) {
      for (Index t = 0; t < t_count; ++t) {
        if (observed(v, t) && !seen[static_cast<std::size_t>(n + t)]) {
          seen[static_cast<std::size_t>(n + t)] = 1;
          ++reached;
          q.push(n + t);
        }
      }
    } else {
      for (Index i = 0; i < n; ++i) {
        if (observed(i, v - n) && !seen[static_cast<std::size_t>(i)]) {
          seen[static_cast<std::size_t>(i)] = 1;
          ++reached;
          q.push(i);
        }
      }
    }
  }
  if (reached != n + t_count) throw Error("rank-deficient design: observed cells split into disconnected blocks");

  // parameters: unit effects (n), time effects 1..T-1 (time effect 0 pinned to zero)
  const Index k = n + t_count - 1;
  Eigen::MatrixXd normal = Eigen::MatrixXd::Zero(k, k);
  for (Index i = 0; i < n; ++i) {
    for (Index t = 0; t < t_count; ++t) {
      if (!observed(i, t)) continue;
      ++n_observed_;
      normal(i, i) += 1.0;
      if (t > 0) {
        const Index c = n + t - 1;
        normal(c, c) += 1.0;
        normal(i, c) += 1.0;
        normal(c, i) += 1.0;
      }
    }
  }
  ldlt_.compute(normal);
  if (ldlt_.info() != Eigen::Success) throw Error("rank-deficient fixed-effects design");
}

void TwoWaySolver::solve(const Eigen::MatrixXd& target, Eigen::VectorXd& unit_effects,
                         Eigen::VectorXd& time_effects) const {
  const Index n = observed_.rows();
  const Index t_count = observed_.cols();
  const Eigen::ArrayXXd masked = observed_.select(target.array(), 0.0);
  Eigen::VectorXd rhs(n + t_count - 1);
  rhs.head(n) = masked.rowwise().sum().matrix();
  rhs.tail(t_count - 1) = masked.colwise().sum().tail(t_count - 1).transpose().matrix();
  const Eigen::VectorXd theta = ldlt_.solve(rhs);
  unit_effects = theta.head(n);
  time_effects.resize(t_count);
  time_effects(0) = 0.0;
  time_effects.tail(t_count - 1) = theta.tail(t_count - 1);
  const double shift = time_effects.mean();
  time_effects.array() -= shift;
  unit_effects.array() += shift;
}

Eigen::MatrixXd two_way_fitted(const Eigen::VectorXd& unit_effects, const Eigen::VectorXd& time_effects) {
  return unit_effects * Eigen::RowVectorXd::Ones(time_effects.size()) +
         Eigen::VectorXd::Ones(unit_effects.size()) * time_effects.transpose();
}

}  // namespace panelcf::detail
