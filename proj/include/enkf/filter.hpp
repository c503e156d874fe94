#pragma once

#include <limits>
#include <string>
#include <string_view>
#include <utility>

#include "enkf/ensemble.hpp"
#include "enkf/inflation.hpp"
#include "enkf/model.hpp"
#include "enkf/observation.hpp"
#include "enkf/rng.hpp"

namespace enkf {

enum class FilterKind { EnKF, ETKF, EAKF };

inline std::string_view to_string(FilterKind k) {
  switch (k) {
    case FilterKind::EnKF: return "EnKF";
    case FilterKind::ETKF: return "ETKF";
    case FilterKind::EAKF: return "EAKF";
  }
  return "?";
}

/// EnKF uses perturbed observations; ETKF/EAKF are square-root filters.
enum class StatisticsVariant { EnKF, ESRF };

inline StatisticsVariant statistics_variant(FilterKind k) {
  return k == FilterKind::EnKF ? StatisticsVariant::EnKF : StatisticsVariant::ESRF;
}

struct FilterStatistics {
  double theta = 0.0;
  double xi = 0.0;
};

template <typename Scalar = double>
struct AnalysisOutput {
  Ensemble<Scalar> posterior;
  InflationDiagnostics diagnostics;
  /// Posterior |H V_k - Z_k| per member (EnKF) or |H mean - Z| (ESRF).
  Vector<Scalar> innovation_norms;
  Scalar forecast_cov_trace = 0;
};

namespace detail {

// Everything below operates on canonical-frame d x K matrices.

template <typename Scalar>
Matrix<Scalar> anomalies(const Matrix<Scalar>& members) {
  return members.colwise() - members.rowwise().mean();
}

/// Xi: spectral norm of the q x (d-q) observed/unobserved block of the
/// forecast covariance; zero when every coordinate is observed.
template <typename Scalar>
Scalar cross_covariance_norm(const Matrix<Scalar>& spread, Eigen::Index q) {
  const Eigen::Index d = spread.rows();
  if (q >= d) return Scalar(0);
  const Eigen::Index k = spread.cols();
  const Matrix<Scalar> b = spread.topRows(q) * spread.bottomRows(d - q).transpose() / static_cast<Scalar>(k - 1);
  if (q == 1 || d - q == 1) return b.norm();
  return Eigen::JacobiSVD<Matrix<Scalar>>(b).singularValues()(0);
}

template <typename Scalar>
Matrix<Scalar> innovations(const ObservationOperator<Scalar>& op, const Matrix<Scalar>& frame_members,
                           const Observation<Scalar>& obs, StatisticsVariant variant) {
  Matrix<Scalar> hv = op.apply_canonical(frame_members);
  if (variant == StatisticsVariant::EnKF) {
    if (obs.perturbed.cols() != frame_members.cols())
      throw InvalidArgument("EnKF statistics need one perturbed observation per member");
    return hv - obs.perturbed;
  }
  return hv.colwise() - obs.z;
}

template <typename Scalar>
FilterStatistics statistics(const Matrix<Scalar>& innov, const Matrix<Scalar>& spread, Eigen::Index q,
                            StatisticsVariant variant, bool literal_esrf_theta) {
  const Scalar mean_sq = innov.colwise().squaredNorm().mean();
  FilterStatistics s;
  s.theta = static_cast<double>(variant == StatisticsVariant::ESRF && literal_esrf_theta ? mean_sq
                                                                                          : std::sqrt(mean_sq));
  s.xi = static_cast<double>(cross_covariance_norm(spread, q));
  return s;
}

/// C~ H^T for C~ = m * C + shift * I, from the anomalies without forming d x d.
template <typename Scalar>
Matrix<Scalar> inflated_gain_columns(const ObservationOperator<Scalar>& op, const Matrix<Scalar>& spread,
                                     Scalar multiplier, Scalar shift) {
  const Eigen::Index q = op.obs_dim();
  const Matrix<Scalar> hs = op.apply_canonical(spread);
  Matrix<Scalar> cht = spread * hs.transpose() / static_cast<Scalar>(spread.cols() - 1);
  cht *= multiplier;
  cht.topRows(q).diagonal() += shift * op.h0();
  return cht;
}

/// (I + H C~ H^T)^{-1} applied to the columns of `rhs`.
template <typename Scalar>
Matrix<Scalar> solve_innovation_system(const ObservationOperator<Scalar>& op, const Matrix<Scalar>& cht,
                                       const Matrix<Scalar>& rhs) {
  const Eigen::Index q = op.obs_dim();
  Matrix<Scalar> g = op.h0().asDiagonal() * cht.topRows(q);
  g = (g + g.transpose()).eval() / Scalar(2);
  g.diagonal().array() += Scalar(1);
  Eigen::LLT<Matrix<Scalar>> llt(g);
  return llt.solve(rhs);
}

}  // namespace detail

/// ETKF transform T = (I_K + (K-1)^{-1} S^T H^T H S)^{-1/2}, symmetric root.
template <typename Scalar>
Matrix<Scalar> etkf_transform(const ObservationOperator<Scalar>& op, const Matrix<Scalar>& frame_spread) {
  const Eigen::Index k = frame_spread.cols();
  const Matrix<Scalar> hs = op.apply_canonical(frame_spread);
  Matrix<Scalar> m = hs.transpose() * hs / static_cast<Scalar>(k - 1);
  m.diagonal().array() += Scalar(1);
  Eigen::SelfAdjointEigenSolver<Matrix<Scalar>> eig(m);
  return eig.operatorInverseSqrt();
}

/// EAKF adjustment A = Q L G^T (I + D)^{-1/2} L^+ Q^T with S = Q L R^T the SVD
/// of the spread and G^T D G the diagonalization of (K-1)^{-1} L Q^T H^T H Q L.
/// Singular values below 1e-10 sigma_max are treated as zero.
template <typename Scalar>
Matrix<Scalar> eakf_adjustment(const ObservationOperator<Scalar>& op, const Matrix<Scalar>& frame_spread) {
  const Eigen::Index d = frame_spread.rows();
  const Eigen::Index k = frame_spread.cols();
  Eigen::JacobiSVD<Matrix<Scalar>> svd(frame_spread, Eigen::ComputeThinU);
  const Vector<Scalar>& sv = svd.singularValues();
  Eigen::Index rank = 0;
  const Scalar cutoff = sv.size() ? Scalar(1e-10) * sv[0] : Scalar(0);
  while (rank < sv.size() && sv[rank] > cutoff && sv[rank] > 0) ++rank;
  if (rank == 0) return Matrix<Scalar>::Zero(d, d);
  const Matrix<Scalar> q = svd.matrixU().leftCols(rank);
  const Vector<Scalar> lambda = sv.head(rank);
  const Matrix<Scalar> hql = op.apply_canonical(q) * lambda.asDiagonal();
  const Matrix<Scalar> m = hql.transpose() * hql / static_cast<Scalar>(k - 1);
  Eigen::SelfAdjointEigenSolver<Matrix<Scalar>> eig(m);
  const Vector<Scalar> scale = (eig.eigenvalues().array() + Scalar(1)).rsqrt();
  return q * lambda.asDiagonal() * eig.eigenvectors() * scale.asDiagonal() * eig.eigenvectors().transpose() *
         lambda.cwiseInverse().asDiagonal() * q.transpose();
}

template <typename Scalar>
FilterStatistics compute_statistics(const Ensemble<Scalar>& forecast, const Observation<Scalar>& obs,
                                    const ObservationOperator<Scalar>& op, StatisticsVariant variant,
                                    bool literal_esrf_theta = false) {
  const Matrix<Scalar> frame = op.to_frame(forecast.members());
  const Matrix<Scalar> innov = detail::innovations(op, frame, obs, variant);
  return detail::statistics(innov, detail::anomalies(frame), op.obs_dim(), variant, literal_esrf_theta);
}

struct AnalysisOptions {
  bool literal_esrf_theta = false;
};

namespace detail {

template <typename Scalar>
std::pair<Scalar, Scalar> inflation_coefficients(const InflationPolicy& policy, double lambda) {
  Scalar multiplier = 1;
  Scalar shift = static_cast<Scalar>(lambda);
  if (policy.constant == ConstantInflation::Additive) shift = static_cast<Scalar>(policy.rho + lambda);
  if (policy.constant == ConstantInflation::Multiplicative) multiplier = static_cast<Scalar>(1.0 + policy.rho);
  return {multiplier, shift};
}

template <typename Scalar>
AnalysisOutput<Scalar> analysis(FilterKind kind, const Ensemble<Scalar>& forecast, const Observation<Scalar>& obs,
                                const ObservationOperator<Scalar>& op, const InflationPolicy& policy,
                                const AnalysisOptions& options) {
  const StatisticsVariant variant = statistics_variant(kind);
  const Eigen::Index k = forecast.size();
  if (!forecast.finite()) {
    // A diverged forecast is carried forward unchanged.
    const double nan = std::numeric_limits<double>::quiet_NaN();
    AnalysisOutput<Scalar> out;
    out.diagnostics = inflation_strength(policy, nan, nan);
    out.posterior = forecast;
    out.innovation_norms = Vector<Scalar>::Constant(variant == StatisticsVariant::EnKF ? k : 1, Scalar(nan));
    out.forecast_cov_trace = Scalar(nan);
    return out;
  }
  const Matrix<Scalar> frame = op.to_frame(forecast.members());
  const Matrix<Scalar> spread = anomalies(frame);
  const Matrix<Scalar> innov = innovations(op, frame, obs, variant);
  const FilterStatistics stats = statistics(innov, spread, op.obs_dim(), variant, options.literal_esrf_theta);

  AnalysisOutput<Scalar> out;
  out.diagnostics = inflation_strength(policy, stats.theta, stats.xi);
  out.forecast_cov_trace = spread.squaredNorm() / static_cast<Scalar>(k - 1);
  const auto [multiplier, shift] = inflation_coefficients<Scalar>(policy, out.diagnostics.lambda);
  const Matrix<Scalar> cht = inflated_gain_columns(op, spread, multiplier, shift);

  Matrix<Scalar> posterior;
  if (kind == FilterKind::EnKF) {
    posterior = frame - cht * solve_innovation_system(op, cht, innov);
    const Matrix<Scalar> post_innov = op.apply_canonical(posterior) - obs.perturbed;
    out.innovation_norms = post_innov.colwise().norm().transpose();
  } else {
    const Vector<Scalar> mean = frame.rowwise().mean();
    const Vector<Scalar> mean_innov = op.apply_canonical(mean).col(0) - obs.z;
    const Vector<Scalar> post_mean = mean - cht * solve_innovation_system(op, cht, Matrix<Scalar>(mean_innov));
    // The spread is updated with the uninflated forecast covariance.
    const Matrix<Scalar> post_spread =
        kind == FilterKind::ETKF ? Matrix<Scalar>(spread * etkf_transform(op, spread))
                                 : Matrix<Scalar>(eakf_adjustment(op, spread) * spread);
    posterior = post_spread.colwise() + post_mean;
    out.innovation_norms = Vector<Scalar>::Constant(1, (op.apply_canonical(post_mean).col(0) - obs.z).norm());
  }
  out.posterior = Ensemble<Scalar>(op.from_frame(posterior));
  return out;
}

}  // namespace detail

/// Stochastic EnKF analysis with inflated forecast covariance C~; every member
/// is updated against its own perturbed observation.
template <typename Scalar>
AnalysisOutput<Scalar> enkf_analysis(const Ensemble<Scalar>& forecast, const Observation<Scalar>& obs,
                                     const ObservationOperator<Scalar>& op, const InflationPolicy& policy,
                                     const AnalysisOptions& options = {}) {
  return detail::analysis(FilterKind::EnKF, forecast, obs, op, policy, options);
}

/// ETKF: mean with inflated C~, spread S T(S) with the uninflated covariance.
template <typename Scalar>
AnalysisOutput<Scalar> etkf_analysis(const Ensemble<Scalar>& forecast, const Observation<Scalar>& obs,
                                     const ObservationOperator<Scalar>& op, const InflationPolicy& policy,
                                     const AnalysisOptions& options = {}) {
  return detail::analysis(FilterKind::ETKF, forecast, obs, op, policy, options);
}

/// EAKF: as ETKF but with the spread adjusted to A(S) S.
template <typename Scalar>
AnalysisOutput<Scalar> eakf_analysis(const Ensemble<Scalar>& forecast, const Observation<Scalar>& obs,
                                     const ObservationOperator<Scalar>& op, const InflationPolicy& policy,
                                     const AnalysisOptions& options = {}) {
  return detail::analysis(FilterKind::EAKF, forecast, obs, op, policy, options);
}

template <typename Scalar>
AnalysisOutput<Scalar> analyse(FilterKind kind, const Ensemble<Scalar>& forecast, const Observation<Scalar>& obs,
                               const ObservationOperator<Scalar>& op, const InflationPolicy& policy,
                               const AnalysisOptions& options = {}) {
  return detail::analysis(kind, forecast, obs, op, policy, options);
}

/// Forecast step: every member advanced by Psi_h plus its own noise draw, in
/// member order.
template <typename Scalar>
void forecast_in_place(Ensemble<Scalar>& ensemble, FlowMap<Scalar>& flow, SystemNoise<Scalar>& noise,
                       RngStream& rng) {
  Vector<Scalar> member(ensemble.dim());
  for (Eigen::Index k = 0; k < ensemble.size(); ++k) {
    member = ensemble.member(k);
    flow.apply(member);
    noise.add_to(member, rng);
    ensemble.member(k) = member;
  }
}

template <typename Scalar>
Ensemble<Scalar> forecast(Ensemble<Scalar> ensemble, const ModelSpec<Scalar>& model,
                          const IntegratorSpec& integrator, Scalar h, RngStream& rng) {
  FlowMap<Scalar> flow(model, integrator, h);
  SystemNoise<Scalar> noise(model.system_noise);
  forecast_in_place(ensemble, flow, noise, rng);
  return ensemble;
}

struct FilterConfig {
  FilterKind kind = FilterKind::EnKF;
  InflationPolicy policy;
  AnalysisOptions options;

  std::string name() const { return std::string(to_string(kind)) + policy.suffix(); }
};

/// Mutable state of one running filter: ensemble, its private random streams
/// and the cycle counter.
template <typename Scalar = double>
struct FilterState {
  Ensemble<Scalar> ensemble;
  RngStream perturbation;
  RngStream system_noise;
  long step = 0;
};

/// One configured filter bound to a model, integrator and observation
/// operator. Holds integrator workspaces, so it is single-threaded.
template <typename Scalar = double>
class EnsembleFilter {
 public:
  EnsembleFilter(FilterConfig config, ObservationOperator<Scalar> op, const ModelSpec<Scalar>& model,
                 const IntegratorSpec& integrator, Scalar h)
      : config_(std::move(config)), op_(std::move(op)), flow_(model, integrator, h), noise_(model.system_noise) {
    config_.policy.validate();
  }

  const FilterConfig& config() const { return config_; }
  const ObservationOperator<Scalar>& op() const { return op_; }
  long evaluations() const { return flow_.evaluations(); }

  /// Forecast then analysis against `obs` (unperturbed; EnKF perturbations are
  /// drawn from the state's own stream). Returns the diagnostics of the step.
  AnalysisOutput<Scalar> assimilate(FilterState<Scalar>& state, const Observation<Scalar>& obs) {
    forecast_in_place(state.ensemble, flow_, noise_, state.system_noise);
    return analyse_only(state, obs);
  }

  /// Analysis without a preceding forecast (the forecast is already in state).
  AnalysisOutput<Scalar> analyse_only(FilterState<Scalar>& state, const Observation<Scalar>& obs) {
    const Observation<Scalar>* used = &obs;
    Observation<Scalar> perturbed;
    if (config_.kind == FilterKind::EnKF && !obs.has_perturbations()) {
      perturbed = obs;
      perturb_observation(perturbed, state.ensemble.size(), state.perturbation);
      used = &perturbed;
    }
    AnalysisOutput<Scalar> out = analyse(config_.kind, state.ensemble, *used, op_, config_.policy, config_.options);
    state.ensemble = out.posterior;
    ++state.step;
    return out;
  }

 private:
  FilterConfig config_;
  ObservationOperator<Scalar> op_;
  FlowMap<Scalar> flow_;
  SystemNoise<Scalar> noise_;
};

template <typename Scalar>
std::pair<FilterState<Scalar>, AnalysisOutput<Scalar>> assimilation_step(EnsembleFilter<Scalar>& filter,
                                                                          FilterState<Scalar> state,
                                                                          const Observation<Scalar>& obs) {
  AnalysisOutput<Scalar> out = filter.assimilate(state, obs);
  return {std::move(state), std::move(out)};
}

}  // namespace enkf
