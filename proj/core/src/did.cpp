#include <array>
#include <cctype>
#include <cmath>
#include <string>

#include "panelcf/baseline.hpp"
#include "two_way.hpp"

namespace panelcf {
namespace {

constexpr std::array<std::pair<Method, std::string_view>, 7> kNames{{
    {Method::mcnnm, "MC-NNM"},
    {Method::did, "DID"},
    {Method::hr_en, "HR-EN"},
    {Method::vt_en, "VT-EN"},
    {Method::pca, "PCA"},
    {Method::sc_adh, "SC-ADH"},
    {Method::svd, "SVD"},
}};

}  // namespace

std::string_view method_name(Method method) {
  for (const auto& [m, name] : kNames) {
    if (m == method) return name;
  }
  return "unknown";
}

std::optional<Method> parse_method(std::string_view name) {
  // case-insensitive, ignoring '-' and '_': "mcnnm", "MC_NNM", "hr-en"
  auto key = [](std::string_view s) {
    std::string k;
    for (char c : s) {
      if (c != '-' && c != '_') k += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    }
    return k;
  };
  const std::string wanted = key(name);
  for (const auto& [m, label] : kNames) {
    if (key(label) == wanted) return m;
  }
  return std::nullopt;
}

const std::vector<Method>& all_methods() {
  static const std::vector<Method> methods{Method::did,    Method::hr_en, Method::mcnnm, Method::pca,
                                           Method::sc_adh, Method::svd,   Method::vt_en};
  return methods;
}

BaselineFit fit_did_binary(const PanelMatrix& panel, const Mask& mask) {
  if (mask.rows() != panel.n_units() || mask.cols() != panel.n_periods()) {
    throw Error("mask shape does not match the panel");
  }
  const BoolArray observed = mask.observed();
  const detail::TwoWaySolver solver(observed);
  const Eigen::MatrixXd y = observed.select(panel.values().array(), 0.0).matrix();
  if (!y.allFinite()) throw Error("observed cells must be finite");

  Eigen::VectorXd unit_effects;
  Eigen::VectorXd time_effects;
  solver.solve(y, unit_effects, time_effects);
  const double grand_mean = unit_effects.mean();
  unit_effects.array() -= grand_mean;

  BaselineFit fit;
  fit.method = Method::did;
  fit.y_hat = detail::two_way_fitted(unit_effects, time_effects).array() + grand_mean;

  double gap = 0.0;
  Index counted = 0;
  for (Index i = 0; i < mask.rows(); ++i) {
    for (Index t = 0; t < mask.cols(); ++t) {
      const double v = panel.values()(i, t);
      if (mask.is_missing(i, t) && std::isfinite(v)) {
        gap += v - fit.y_hat(i, t);
        ++counted;
      }
    }
  }
  fit.diagnostics["grand_mean"] = grand_mean;
  fit.diagnostics["unit_effects"] = std::vector<double>(unit_effects.data(), unit_effects.data() + unit_effects.size());
  fit.diagnostics["time_effects"] = std::vector<double>(time_effects.data(), time_effects.data() + time_effects.size());
  if (counted > 0) {
    fit.diagnostics["treatment_effect"] = gap / static_cast<double>(counted);
  } else {
    fit.diagnostics["treatment_effect"] = nullptr;
  }
  fit.diagnostics["treated_cells"] = counted;
  return fit;
}

}  // namespace panelcf
