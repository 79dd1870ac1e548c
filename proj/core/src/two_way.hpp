#pragma once

#include <Eigen/Dense>

#include "panelcf/panel.hpp"

namespace panelcf::detail {

/// Least-squares unit and time effects on the observed cells of a fixed
/// pattern. The normal equations are factorized once; each solve is a
/// back-substitution. Time effects are centered to mean zero.
class TwoWaySolver {
 public:
  explicit TwoWaySolver(const BoolArray& observed);

  void solve(const Eigen::MatrixXd& target, Eigen::VectorXd& unit_effects,
             Eigen::VectorXd& time_effects) const;

  Index n_observed() const noexcept { return n_observed_; }

 private:
  BoolArray observed_;
  Eigen::LDLT<Eigen::MatrixXd> ldlt_;
  Index n_observed_ = 0;
};

/// unit_effects(i) + time_effects(t) broadcast to N x T.
Eigen::MatrixXd two_way_fitted(const Eigen::VectorXd& unit_effects, const Eigen::VectorXd& time_effects);

}  // namespace panelcf::detail
