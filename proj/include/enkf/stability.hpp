#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "enkf/filter.hpp"

namespace enkf {

class BoundViolated : public Error {
 public:
  BoundViolated(Eigen::Index member, double ratio)
      : Error("innovation bound violated by member " + std::to_string(member) + " (ratio " + std::to_string(ratio) +
              ")"),
        member_(member),
        ratio_(ratio) {}
  Eigen::Index member() const { return member_; }
  double ratio() const { return ratio_; }

 private:
  Eigen::Index member_;
  double ratio_;
};

/// sqrt(K) max{M1, 1 / (rho0 c_phi)}: almost-sure bound on the posterior
/// innovation of each member for adaptively inflated EnKF.
inline double innovation_bound(const AdaptiveInflation& a, double rho0, Eigen::Index members) {
  return std::sqrt(static_cast<double>(members)) * std::max(a.m1, 1.0 / (rho0 * a.c_phi));
}

struct InnovationCheck {
  double bound = 0;
  double max_norm = 0;
  /// max_k |H V_k - Z_k| / bound.
  double max_ratio = 0;
  Eigen::Index worst_member = -1;
  bool ok = true;
};

inline constexpr double kInnovationSlack = 1e-8;

template <typename Scalar>
InnovationCheck assert_innovation_bound(const AnalysisOutput<Scalar>& output, const InflationPolicy& policy,
                                        const ObservationOperator<Scalar>& op, Eigen::Index members) {
  if (!policy.adaptive) throw InvalidArgument("innovation bound only applies with adaptive inflation");
  InnovationCheck c;
  c.bound = innovation_bound(*policy.adaptive, static_cast<double>(op.rho0()), members);
  for (Eigen::Index k = 0; k < output.innovation_norms.size(); ++k) {
    const double v = static_cast<double>(output.innovation_norms[k]);
    const double ratio = v / c.bound;
    if (!(ratio <= c.max_ratio) || c.worst_member < 0) {
      c.max_ratio = ratio;
      c.max_norm = v;
      c.worst_member = k;
    }
    if (!(v <= c.bound + kInnovationSlack)) c.ok = false;
  }
  return c;
}

/// As assert_innovation_bound but throws BoundViolated on failure.
template <typename Scalar>
InnovationCheck enforce_innovation_bound(const AnalysisOutput<Scalar>& output, const InflationPolicy& policy,
                                         const ObservationOperator<Scalar>& op, Eigen::Index members) {
  InnovationCheck c = assert_innovation_bound(output, policy, op, members);
  if (!c.ok) throw BoundViolated(c.worst_member, c.max_ratio);
  return c;
}

/// Constants of the model energy principle E|U_n|^2 <= (1-beta)|U_{n-1}|^2 + K.
struct EnergyParams {
  double beta_h = 0.5;
  double k_h = 1.0;
};

/// Monitoring defaults for Lorenz-96 from <psi(u),u> <= -|u|^2/2 + 5F^2 and a
/// Gronwall step over h. Used only as weights, never for filtering.
inline EnergyParams lorenz96_energy_params(double forcing, double h) {
  return {1.0 - std::exp(-h), 10.0 * forcing * forcing * h};
}

struct EnergyFunctional {
  double value = 0;
  double weight = 0;
};

/// E_n = 4 K rho0^{-1} beta^{-1} |H|^2 |U_n|^2 + sum_k |V_k|^2.
template <typename Scalar>
EnergyFunctional track_energy(const Vector<Scalar>& truth, const Ensemble<Scalar>& ensemble, const EnergyParams& params,
                              const ObservationOperator<Scalar>& op) {
  const double hn = static_cast<double>(op.norm());
  EnergyFunctional e;
  e.weight = 4.0 * static_cast<double>(ensemble.size()) * hn * hn / (static_cast<double>(op.rho0()) * params.beta_h);
  e.value = e.weight * static_cast<double>(truth.squaredNorm()) + static_cast<double>(ensemble.energy());
  return e;
}

enum class DivergenceCause { None, NonFiniteEnsemble, NonFiniteTruth, SolverFailure };

inline std::string_view to_string(DivergenceCause c) {
  switch (c) {
    case DivergenceCause::None: return "none";
    case DivergenceCause::NonFiniteEnsemble: return "non-finite-ensemble";
    case DivergenceCause::NonFiniteTruth: return "non-finite-truth";
    case DivergenceCause::SolverFailure: return "solver-failure";
  }
  return "?";
}

struct DivergenceVerdict {
  bool diverged = false;
  std::optional<long> first_step;
  DivergenceCause cause = DivergenceCause::None;
};

/// Accumulates per-step checks; entries that are NaN, infinite or beyond
/// 1e300 in magnitude count as machine infinity. Divergence is absorbing.
class DivergenceMonitor {
 public:
  template <typename Derived>
  bool observe(long step, const Eigen::MatrixBase<Derived>& ensemble_members) {
    if (!verdict_.diverged && !all_finite(ensemble_members)) mark(step, DivergenceCause::NonFiniteEnsemble);
    return verdict_.diverged;
  }

  template <typename Derived>
  bool observe_truth(long step, const Eigen::MatrixBase<Derived>& truth) {
    if (!verdict_.diverged && !all_finite(truth)) mark(step, DivergenceCause::NonFiniteTruth);
    return verdict_.diverged;
  }

  void solver_failure(long step) {
    if (!verdict_.diverged) mark(step, DivergenceCause::SolverFailure);
  }

  const DivergenceVerdict& verdict() const { return verdict_; }

 private:
  void mark(long step, DivergenceCause cause) {
    verdict_.diverged = true;
    verdict_.first_step = step;
    verdict_.cause = cause;
  }
  DivergenceVerdict verdict_;
};

template <typename Scalar>
DivergenceVerdict detect_divergence(std::span<const Matrix<Scalar>> trajectory) {
  DivergenceMonitor m;
  for (std::size_t n = 0; n < trajectory.size(); ++n) m.observe(static_cast<long>(n), trajectory[n]);
  return m.verdict();
}

/// Runs the same filter from two initial ensembles against one observation
/// sequence with shared random streams and returns |mean_a(n) - mean_b(n)|.
template <typename Scalar>
std::vector<double> ergodicity_probe(EnsembleFilter<Scalar>& filter_a, EnsembleFilter<Scalar>& filter_b,
                                     FilterState<Scalar> state_a, FilterState<Scalar> state_b,
                                     std::span<const Observation<Scalar>> observations) {
  std::vector<double> distance;
  distance.reserve(observations.size());
  for (const auto& obs : observations) {
    filter_a.assimilate(state_a, obs);
    filter_b.assimilate(state_b, obs);
    distance.push_back(static_cast<double>((state_a.ensemble.mean() - state_b.ensemble.mean()).norm()));
  }
  return distance;
}

/// Least-squares slope of log(series) against the index.
inline double log_slope(std::span<const double> series) {
  const std::size_t n = series.size();
  if (n < 2) return 0;
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = static_cast<double>(i);
    const double y = std::log(series[i]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double dn = static_cast<double>(n);
  return (dn * sxy - sx * sy) / (dn * sxx - sx * sx);
}

/// Mean of the second half of a series compared against the first half.
inline bool second_half_smaller(std::span<const double> series) {
  const std::size_t half = series.size() / 2;
  if (half == 0) return false;
  double a = 0, b = 0;
  for (std::size_t i = 0; i < half; ++i) a += series[i];
  for (std::size_t i = half; i < series.size(); ++i) b += series[i];
  return b / static_cast<double>(series.size() - half) < a / static_cast<double>(half);
}

}  // namespace enkf
