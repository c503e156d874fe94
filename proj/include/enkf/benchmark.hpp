#pragma once

#include <cmath>
#include <cstdint>

#include "enkf/model.hpp"
#include "enkf/observation.hpp"
#include "enkf/rng.hpp"

namespace enkf {

/// Long-run signal statistics used for initial draws and benchmarks.
template <typename Scalar = double>
struct Climatology {
  Vector<Scalar> mean;
  Matrix<Scalar> covariance;
  long samples = 0;
  double burn_in = 0;
  double run_length = 0;
  double interval = 0;
};

struct ClimatologyOptions {
  double run_length = 1e4;
  double burn_in = 10;
  /// Independent trajectories pooled into one estimate.
  int chains = 1;
};

/// Time averages sampled every h after the burn-in. Throws
/// DivergedClimatologyRun if the trajectory leaves the finite range.
template <typename Scalar>
Climatology<Scalar> estimate_climatology(const ModelSpec<Scalar>& model, const IntegratorSpec& integrator, Scalar h,
                                         const ClimatologyOptions& options, std::uint64_t seed) {
  if (options.chains < 1) throw InvalidArgument("climatology needs at least one chain");
  const Eigen::Index d = model.dimension;
  const long burn_steps = std::lround(options.burn_in / static_cast<double>(h));
  const long steps = std::lround(options.run_length / static_cast<double>(h));
  if (steps < 2) throw InvalidArgument("climatology run too short");

  // Shifted accumulation: sums of (u - shift) keep the covariance well conditioned.
  Vector<double> shift = Vector<double>::Zero(d);
  Vector<double> sum = Vector<double>::Zero(d);
  Matrix<double> outer = Matrix<double>::Zero(d, d);
  long count = 0;
  for (int c = 0; c < options.chains; ++c) {
    RngStream rng(seed, static_cast<std::uint64_t>(c), StreamRole::Climatology);
    FlowMap<Scalar> flow(model, integrator, h);
    SystemNoise<Scalar> noise(model.system_noise);
    Vector<Scalar> u(d);
    const Scalar base = model.is_lorenz96() ? model.forcing() : Scalar(0);
    for (Eigen::Index i = 0; i < d; ++i) u[i] = base + static_cast<Scalar>(rng.normal());
    for (long n = 0; n < burn_steps; ++n) {
      flow.apply(u);
      noise.add_to(u, rng);
    }
    if (c == 0) shift = u.template cast<double>();
    for (long n = 0; n < steps; ++n) {
      flow.apply(u);
      noise.add_to(u, rng);
      if (!all_finite(u))
        throw DivergedClimatologyRun("climatology trajectory became non-finite at step " + std::to_string(n));
      const Vector<double> centred = u.template cast<double>() - shift;
      sum += centred;
      outer.noalias() += centred * centred.transpose();
      ++count;
    }
  }
  const Vector<double> mean_c = sum / static_cast<double>(count);
  Matrix<double> cov = (outer - static_cast<double>(count) * mean_c * mean_c.transpose()) / static_cast<double>(count - 1);
  cov = (cov + cov.transpose()).eval() / 2.0;

  Climatology<Scalar> out;
  out.mean = (mean_c + shift).template cast<Scalar>();
  out.covariance = cov.template cast<Scalar>();
  out.samples = count;
  out.burn_in = options.burn_in;
  out.run_length = options.run_length;
  out.interval = static_cast<double>(h);
  return out;
}

template <typename Scalar = double>
struct BenchmarkResult {
  /// Mean-square error of the Gaussian one-observation conditional estimator.
  double error_a = 0;
  /// sigma_Theta, the aggressive threshold M1.
  double sigma_theta = 0;
  /// M_Xi, the aggressive threshold M2.
  double m_xi = 0;
  /// Error covariance cov(r_K) in canonical coordinates.
  Matrix<Scalar> posterior_cov;
  /// Noise contribution 2 q_eff to sigma_Theta^2.
  double noise_term = 0;

  double benchmark_rmse() const { return std::sqrt(error_a); }
};

/// Noise term in sigma_Theta^2: 2q in the whitened frame (default) or the
/// literal 2d.
enum class NoiseDimension { Observed, State };

/// Kalman prior-posterior covariance for a single observation of a Gaussian
/// climatology, and the thresholds derived from it.
template <typename Scalar>
BenchmarkResult<Scalar> benchmark_error(const Climatology<Scalar>& clim, const ObservationOperator<Scalar>& op,
                                        Eigen::Index members, NoiseDimension noise_dim = NoiseDimension::Observed) {
  if (members < 2) throw InvalidArgument("ensemble size must be at least 2");
  const Matrix<Scalar> prior = op.identity_rotation()
                                   ? clim.covariance
                                   : Matrix<Scalar>(op.rotation().transpose() * clim.covariance * op.rotation());
  const Matrix<Scalar> h = op.h_white();
  const Matrix<Scalar> pht = prior * h.transpose();
  Matrix<Scalar> s = h * pht;
  s.diagonal().array() += Scalar(1);
  Matrix<Scalar> post = prior - pht * Eigen::LLT<Matrix<Scalar>>(s).solve(pht.transpose());
  post = (post + post.transpose()).eval() / Scalar(2);

  BenchmarkResult<Scalar> out;
  out.posterior_cov = post;
  out.error_a = static_cast<double>(post.trace());
  const double q_eff = noise_dim == NoiseDimension::Observed ? static_cast<double>(op.obs_dim())
                                                              : static_cast<double>(op.state_dim());
  out.noise_term = 2.0 * q_eff;
  const double hn = static_cast<double>(op.norm());
  out.sigma_theta = std::sqrt(hn * hn * out.error_a + out.noise_term);
  const double k = static_cast<double>(members);
  out.m_xi = k / (2.0 * k - 2.0) * out.error_a;
  return out;
}

struct TrivialBenchmark {
  /// Bound on E Theta^2.
  double theta_sq_bound = 0;
  /// Bound on E Xi.
  double xi_bound = 0;
};

/// Estimator-free bounds using E|U|^2 <= K_h / beta_h.
inline TrivialBenchmark trivial_benchmark(double beta_h, double k_h, double h_norm, double q_eff, long members) {
  if (!(beta_h > 0 && beta_h < 1)) throw InvalidArgument("beta_h must lie in (0,1)");
  if (k_h < 0) throw InvalidArgument("K_h must be non-negative");
  if (members < 2) throw InvalidArgument("ensemble size must be at least 2");
  const double energy = k_h / beta_h;
  const double k = static_cast<double>(members);
  return {h_norm * h_norm * energy + 2.0 * q_eff, k / (2.0 * k - 2.0) * energy};
}

}  // namespace enkf
