#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <string>

#include "enkf/types.hpp"

namespace enkf {

enum class ConstantInflation { None, Additive, Multiplicative };

/// Adaptive inflation lambda = c_phi * Theta * (1 + Xi), switched on only when
/// Theta > m1 or Xi > m2 (strict).
struct AdaptiveInflation {
  double c_phi = 1.0;
  double m1 = std::numeric_limits<double>::infinity();
  double m2 = std::numeric_limits<double>::infinity();
};

struct InflationPolicy {
  ConstantInflation constant = ConstantInflation::None;
  double rho = 0.0;
  std::optional<AdaptiveInflation> adaptive;

  static InflationPolicy none() { return {}; }
  static InflationPolicy constant_additive(double rho) { return {ConstantInflation::Additive, rho, std::nullopt}; }
  static InflationPolicy constant_multiplicative(double rho) {
    return {ConstantInflation::Multiplicative, rho, std::nullopt};
  }
  static InflationPolicy adaptive_only(AdaptiveInflation a) { return {ConstantInflation::None, 0.0, a}; }
  static InflationPolicy constant_adaptive(double rho, AdaptiveInflation a,
                                           ConstantInflation kind = ConstantInflation::Additive) {
    return {kind, rho, a};
  }

  bool has_constant() const { return constant != ConstantInflation::None; }
  bool has_adaptive() const { return adaptive.has_value(); }

  /// Nomenclature suffix: "", "-AI", "-CI" or "-CAI".
  std::string suffix() const {
    if (has_constant() && has_adaptive()) return "-CAI";
    if (has_constant()) return "-CI";
    if (has_adaptive()) return "-AI";
    return "";
  }

  void validate() const {
    if (!(rho >= 0) || !std::isfinite(rho)) throw InvalidArgument("constant inflation rho must be finite and >= 0");
    if (adaptive) {
      if (!(adaptive->c_phi > 0)) throw InvalidArgument("adaptive inflation c_phi must be positive");
      if (!(adaptive->m1 > 0) || !(adaptive->m2 > 0)) throw InvalidArgument("adaptive thresholds must be positive");
    }
  }
};

struct InflationDiagnostics {
  double theta = 0.0;
  double xi = 0.0;
  double lambda = 0.0;
  bool triggered = false;
};

/// Evaluates the cut-off function. Non-finite statistics mean the ensemble has
/// already diverged; with adaptive inflation on this raises NonFiniteStatistics.
inline InflationDiagnostics inflation_strength(const InflationPolicy& policy, double theta, double xi) {
  InflationDiagnostics out{theta, xi, 0.0, false};
  if (!policy.adaptive) return out;
  if (!std::isfinite(theta) || !std::isfinite(xi))
    throw NonFiniteStatistics("non-finite filter statistics (theta=" + std::to_string(theta) +
                              ", xi=" + std::to_string(xi) + ")");
  const AdaptiveInflation& a = *policy.adaptive;
  out.triggered = theta > a.m1 || xi > a.m2;
  if (out.triggered) out.lambda = a.c_phi * theta * (1.0 + xi);
  return out;
}

}  // namespace enkf
