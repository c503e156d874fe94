#pragma once

#include <utility>
#include <variant>

#include <unsupported/Eigen/MatrixFunctions>

#include "enkf/integrators.hpp"
#include "enkf/rng.hpp"
#include "enkf/types.hpp"

namespace enkf {

template <typename Scalar>
using SignalState = Vector<Scalar>;

/// dx_i/dt = x_{i-1} (x_{i+1} - x_{i-2}) - x_i + F, indices cyclic mod d.
template <typename Scalar>
struct Lorenz96Field {
  Scalar forcing;

  void operator()(const Vector<Scalar>& x, Vector<Scalar>& out) const {
    const Eigen::Index d = x.size();
    for (Eigen::Index i = 0; i < d; ++i) {
      const Eigen::Index im1 = i == 0 ? d - 1 : i - 1;
      const Eigen::Index ip1 = i + 1 == d ? 0 : i + 1;
      const Eigen::Index im2 = i >= 2 ? i - 2 : i + d - 2;
      out[i] = x[im1] * (x[ip1] - x[im2]) - x[i] + forcing;
    }
  }

  void jacobian(const Vector<Scalar>& x, Matrix<Scalar>& jac) const {
    const Eigen::Index d = x.size();
    jac.setZero(d, d);
    for (Eigen::Index i = 0; i < d; ++i) {
      const Eigen::Index im1 = i == 0 ? d - 1 : i - 1;
      const Eigen::Index ip1 = i + 1 == d ? 0 : i + 1;
      const Eigen::Index im2 = i >= 2 ? i - 2 : i + d - 2;
      jac(i, im1) += x[ip1] - x[im2];
      jac(i, ip1) += x[im1];
      jac(i, im2) -= x[im1];
      jac(i, i) -= 1;
    }
  }
};

template <typename Scalar>
struct LinearField {
  Matrix<Scalar> drift;
  void operator()(const Vector<Scalar>& x, Vector<Scalar>& out) const { out.noalias() = drift * x; }
  void jacobian(const Vector<Scalar>&, Matrix<Scalar>& jac) const { jac = drift; }
};

template <typename Scalar = double>
struct Lorenz96 {
  Scalar forcing = 8;
};

/// Linear model. With `generator` the drift A defines du = A u dt and the
/// flow map is exp(hA); otherwise `drift` is the one-step map itself.
template <typename Scalar = double>
struct LinearGaussian {
  Matrix<Scalar> drift;
  bool generator = true;
};

template <typename Scalar = double>
struct ModelSpec {
  std::variant<Lorenz96<Scalar>, LinearGaussian<Scalar>> kind;
  Eigen::Index dimension = 5;
  /// Covariance R_h of the additive noise accumulated over one observation
  /// interval. Zero for the deterministic Lorenz-96 experiments.
  Matrix<Scalar> system_noise;

  static ModelSpec lorenz96(Scalar forcing, Eigen::Index d = 5) {
    return ModelSpec{Lorenz96<Scalar>{forcing}, d, Matrix<Scalar>::Zero(d, d)};
  }

  static ModelSpec linear_gaussian(Matrix<Scalar> drift, Matrix<Scalar> system_noise, bool generator = true) {
    const Eigen::Index d = drift.rows();
    if (drift.cols() != d || system_noise.rows() != d || system_noise.cols() != d)
      throw InvalidArgument("linear model: drift and noise covariance must be square of equal size");
    return ModelSpec{LinearGaussian<Scalar>{std::move(drift), generator}, d, std::move(system_noise)};
  }

  /// Ornstein-Uhlenbeck du = A u dt + dW with cov(dW) = Q dt, sampled at
  /// interval h. R_h is the exact integrated noise covariance (Van Loan).
  static ModelSpec ornstein_uhlenbeck(const Matrix<Scalar>& drift, const Matrix<Scalar>& diffusion, Scalar h) {
    const Eigen::Index d = drift.rows();
    Matrix<Scalar> block = Matrix<Scalar>::Zero(2 * d, 2 * d);
    block.topLeftCorner(d, d) = -drift;
    block.topRightCorner(d, d) = diffusion;
    block.bottomRightCorner(d, d) = drift.transpose();
    const Matrix<Scalar> e = (block * h).exp();
    Matrix<Scalar> r = e.bottomRightCorner(d, d).transpose() * e.topRightCorner(d, d);
    r = (r + r.transpose()).eval() / Scalar(2);
    return linear_gaussian(drift, std::move(r), true);
  }

  bool is_lorenz96() const { return std::holds_alternative<Lorenz96<Scalar>>(kind); }
  Scalar forcing() const { return std::get<Lorenz96<Scalar>>(kind).forcing; }
};

/// Deterministic flow map Psi_h bound to a model, integrator and interval.
/// Owns integrator workspaces: one instance per thread.
template <typename Scalar = double>
class FlowMap {
 public:
  FlowMap(const ModelSpec<Scalar>& model, const IntegratorSpec& integrator, Scalar h) : h_(h) {
    if (!(h > 0)) throw InvalidArgument("observation interval must be positive");
    if (const auto* l96 = std::get_if<Lorenz96<Scalar>>(&model.kind)) {
      impl_.template emplace<Integrator<Scalar, Lorenz96Field<Scalar>>>(Lorenz96Field<Scalar>{l96->forcing},
                                                                        integrator, model.dimension);
      // Validates step divisibility up front instead of on first use.
      if (integrator.scheme != Scheme::AdaptiveRK45) micro_steps(static_cast<double>(h), integrator.step);
    } else {
      const auto& lin = std::get<LinearGaussian<Scalar>>(model.kind);
      impl_.template emplace<Matrix<Scalar>>(lin.generator ? Matrix<Scalar>((lin.drift * h).exp()) : lin.drift);
      scratch_.resize(model.dimension);
    }
  }

  Scalar interval() const { return h_; }

  /// Advances x in place. Non-finite input is left untouched.
  void apply(Vector<Scalar>& x) {
    if (auto* integ = std::get_if<Integrator<Scalar, Lorenz96Field<Scalar>>>(&impl_)) {
      integ->advance(x, h_);
    } else {
      scratch_.noalias() = std::get<Matrix<Scalar>>(impl_) * x;
      x.swap(scratch_);
    }
  }

  Vector<Scalar> operator()(Vector<Scalar> x) {
    apply(x);
    return x;
  }

  long evaluations() const {
    if (const auto* integ = std::get_if<Integrator<Scalar, Lorenz96Field<Scalar>>>(&impl_))
      return integ->evaluations();
    return 0;
  }

 private:
  Scalar h_;
  std::variant<std::monostate, Integrator<Scalar, Lorenz96Field<Scalar>>, Matrix<Scalar>> impl_;
  Vector<Scalar> scratch_;
};

/// Gaussian sampler for the additive system noise with covariance R_h.
template <typename Scalar = double>
class SystemNoise {
 public:
  explicit SystemNoise(const Matrix<Scalar>& covariance) : dim_(covariance.rows()) {
    if (covariance.rows() != covariance.cols()) throw InvalidArgument("noise covariance must be square");
    zero_ = covariance.isZero(0);
    if (zero_) return;
    if (!covariance.isApprox(covariance.transpose(), Scalar(1e-10)))
      throw CholeskyFailed("noise covariance is not symmetric");
    // Pivoted LDL^T keeps exact zeros for degenerate directions.
    Eigen::LDLT<Matrix<Scalar>> ldlt(covariance);
    if (ldlt.info() != Eigen::Success) throw CholeskyFailed("LDLT factorization of noise covariance failed");
    Vector<Scalar> diag = ldlt.vectorD();
    const Scalar tol = Scalar(1e-10) * std::max<Scalar>(Scalar(1), covariance.cwiseAbs().maxCoeff());
    if (diag.minCoeff() < -tol) throw CholeskyFailed("noise covariance is indefinite");
    diag = diag.cwiseMax(Scalar(0)).cwiseSqrt();
    Matrix<Scalar> l = ldlt.matrixL();
    factor_ = ldlt.transpositionsP().transpose() * (l * diag.asDiagonal());
    draw_.resize(dim_);
  }

  bool is_zero() const { return zero_; }

  /// Adds one draw to x. Zero covariance consumes no random numbers.
  void add_to(Vector<Scalar>& x, RngStream& rng) {
    if (zero_) return;
    rng.fill_normal(draw_);
    x.noalias() += factor_ * draw_;
  }

  Vector<Scalar> sample(RngStream& rng) {
    Vector<Scalar> out = Vector<Scalar>::Zero(dim_);
    add_to(out, rng);
    return out;
  }

  const Matrix<Scalar>& factor() const { return factor_; }

 private:
  Eigen::Index dim_;
  bool zero_ = true;
  Matrix<Scalar> factor_;
  Vector<Scalar> draw_;
};

template <typename Scalar>
SignalState<Scalar> flow_map(const ModelSpec<Scalar>& model, const IntegratorSpec& integrator,
                             const SignalState<Scalar>& state, Scalar h) {
  FlowMap<Scalar> map(model, integrator, h);
  return map(state);
}

template <typename Scalar>
SignalState<Scalar> sample_system_noise(const ModelSpec<Scalar>& model, RngStream& rng) {
  return SystemNoise<Scalar>(model.system_noise).sample(rng);
}

/// U_n = Psi_h(U_{n-1}) + zeta_n.
template <typename Scalar>
SignalState<Scalar> advance_signal(const ModelSpec<Scalar>& model, const IntegratorSpec& integrator,
                                   const SignalState<Scalar>& state, Scalar h, RngStream& rng) {
  SignalState<Scalar> next = flow_map(model, integrator, state, h);
  SystemNoise<Scalar>(model.system_noise).add_to(next, rng);
  return next;
}

/// <psi(u), u> for Lorenz-96; the quadratic part is energy conserving, so this
/// equals F sum(u) - |u|^2.
template <typename Scalar>
Scalar lorenz96_energy_drift(Scalar forcing, const Vector<Scalar>& u) {
  Vector<Scalar> f(u.size());
  Lorenz96Field<Scalar>{forcing}(u, f);
  return f.dot(u);
}

}  // namespace enkf
