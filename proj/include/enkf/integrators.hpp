#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <string_view>
#include <utility>

#include "enkf/types.hpp"

namespace enkf {

enum class Scheme { ExplicitEuler, RK4, ImplicitEuler, AdaptiveRK45 };

inline std::string_view to_string(Scheme s) {
  switch (s) {
    case Scheme::ExplicitEuler: return "explicit-euler";
    case Scheme::RK4: return "rk4";
    case Scheme::ImplicitEuler: return "implicit-euler";
    case Scheme::AdaptiveRK45: return "rk45";
  }
  return "?";
}

inline Scheme scheme_from_string(std::string_view s) {
  if (s == "explicit-euler" || s == "euler" || s == "explicit") return Scheme::ExplicitEuler;
  if (s == "rk4") return Scheme::RK4;
  if (s == "implicit-euler" || s == "implicit") return Scheme::ImplicitEuler;
  if (s == "rk45" || s == "ode45" || s == "dopri5") return Scheme::AdaptiveRK45;
  throw InvalidArgument("unknown integrator '" + std::string(s) + "'");
}

struct IntegratorSpec {
  Scheme scheme = Scheme::ExplicitEuler;
  /// Fixed step for Euler/RK4/implicit Euler; initial step guess for RK45.
  double step = 1e-4;
  double implicit_tolerance = 1e-10;
  int implicit_max_iterations = 50;
  double rk45_rel_tol = 1e-3;
  double rk45_abs_tol = 1e-6;
  /// Hard cap on accepted+rejected RK45 steps in one call.
  long rk45_max_steps = 2'000'000;

  static IntegratorSpec explicit_euler(double step = 1e-4) { return {Scheme::ExplicitEuler, step}; }
  static IntegratorSpec rk4(double step = 2.5e-3) { return {Scheme::RK4, step}; }
  static IntegratorSpec implicit_euler(double step = 1e-2) { return {Scheme::ImplicitEuler, step}; }
  static IntegratorSpec rk45(double initial_step = 1e-2) { return {Scheme::AdaptiveRK45, initial_step}; }
};

/// Number of fixed micro-steps covering an interval h. Throws when the step
/// does not divide h to within one part in 1e9.
inline long micro_steps(double h, double step) {
  if (!(h > 0) || !(step > 0)) throw InvalidArgument("integration interval and step must be positive");
  const double ratio = h / step;
  const long n = std::max(1L, std::lround(ratio));
  if (std::abs(static_cast<double>(n) * step - h) > 1e-9 * h)
    throw InvalidArgument("integrator step " + std::to_string(step) + " does not divide interval " +
                          std::to_string(h));
  return n;
}

/// Integrates dx/dt = field(x) in place over time h. `Field` provides
///   void operator()(const Vector&, Vector&) const   (right-hand side)
///   void jacobian(const Vector&, Matrix&) const     (for the implicit scheme)
/// Workspaces are kept between calls, so one integrator instance must not be
/// shared across threads.
template <typename Scalar, typename Field>
class Integrator {
 public:
  using VectorType = Vector<Scalar>;
  using MatrixType = Matrix<Scalar>;

  Integrator(Field field, IntegratorSpec spec, Eigen::Index dim) : field_(std::move(field)), spec_(spec) {
    for (auto* v : {&k1_, &k2_, &k3_, &k4_, &k5_, &k6_, &k7_, &tmp_, &y_, &res_, &delta_}) v->resize(dim);
    if (spec_.scheme == Scheme::ImplicitEuler) jac_.resize(dim, dim);
  }

  const IntegratorSpec& spec() const { return spec_; }

  void advance(VectorType& x, Scalar h) {
    if (!all_finite(x)) return;
    switch (spec_.scheme) {
      case Scheme::ExplicitEuler: euler(x, h); break;
      case Scheme::RK4: rk4(x, h); break;
      case Scheme::ImplicitEuler: implicit_euler(x, h); break;
      case Scheme::AdaptiveRK45: dopri(x, h); break;
    }
  }

  /// Right-hand-side evaluations made so far.
  long evaluations() const { return evaluations_; }

 private:
  void f(const VectorType& x, VectorType& out) {
    field_(x, out);
    ++evaluations_;
  }

  void euler(VectorType& x, Scalar h) {
    const long n = micro_steps(static_cast<double>(h), spec_.step);
    const Scalar dt = h / static_cast<Scalar>(n);
    for (long s = 0; s < n; ++s) {
      f(x, k1_);
      x.noalias() += dt * k1_;
    }
  }

  void rk4(VectorType& x, Scalar h) {
    const long n = micro_steps(static_cast<double>(h), spec_.step);
    const Scalar dt = h / static_cast<Scalar>(n);
    const Scalar half = dt / 2;
    for (long s = 0; s < n; ++s) {
      f(x, k1_);
      tmp_ = x + half * k1_;
      f(tmp_, k2_);
      tmp_ = x + half * k2_;
      f(tmp_, k3_);
      tmp_ = x + dt * k3_;
      f(tmp_, k4_);
      x.noalias() += (dt / 6) * (k1_ + Scalar(2) * k2_ + Scalar(2) * k3_ + k4_);
    }
  }

  // Backward Euler with damped Newton on G(y) = y - x - dt f(y).
  void implicit_euler(VectorType& x, Scalar h) {
    const long n = micro_steps(static_cast<double>(h), spec_.step);
    const Scalar dt = h / static_cast<Scalar>(n);
    const Scalar tol = static_cast<Scalar>(spec_.implicit_tolerance);
    const Eigen::Index dim = x.size();
    for (long s = 0; s < n; ++s) {
      f(x, k1_);
      y_ = x + dt * k1_;
      if (!all_finite(y_)) y_ = x;
      residual(x, y_, dt);
      Scalar rnorm = res_.template lpNorm<Eigen::Infinity>();
      bool converged = false;
      int it = 0;
      for (; it < spec_.implicit_max_iterations; ++it) {
        const Scalar scale = 1 + y_.template lpNorm<Eigen::Infinity>();
        if (rnorm <= tol * scale) {
          converged = true;
          break;
        }
        field_.jacobian(y_, jac_);
        jac_ = MatrixType::Identity(dim, dim) - dt * jac_;
        delta_ = jac_.partialPivLu().solve(-res_);
        Scalar t = 1;
        for (;;) {
          tmp_ = y_ + t * delta_;
          residual(x, tmp_, dt);
          const Scalar trial = res_.template lpNorm<Eigen::Infinity>();
          if ((std::isfinite(trial) && trial <= (1 - Scalar(1e-4) * t) * rnorm) || t < Scalar(1.0 / 1024)) {
            y_ = tmp_;
            rnorm = trial;
            break;
          }
          t /= 2;
        }
        if (!std::isfinite(rnorm)) break;
        // Newton steps at roundoff level count as convergence for very large states.
        if (t == 1 && delta_.template lpNorm<Eigen::Infinity>() <= tol * (1 + y_.template lpNorm<Eigen::Infinity>())) {
          converged = true;
          break;
        }
      }
      if (!converged) throw ImplicitSolveFailed(it, static_cast<double>(rnorm));
      x = y_;
    }
  }

  void residual(const VectorType& x, const VectorType& y, Scalar dt) {
    f(y, k2_);
    res_ = y - x - dt * k2_;
  }

  // Dormand-Prince 5(4) with FSAL and standard step-size control.
  void dopri(VectorType& x, Scalar h) {
    const Scalar a21 = 1.0 / 5, a31 = 3.0 / 40, a32 = 9.0 / 40, a41 = 44.0 / 45, a42 = -56.0 / 15,
                     a43 = 32.0 / 9, a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                     a54 = -212.0 / 729, a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                     a64 = 49.0 / 176, a65 = -5103.0 / 18656, b1 = 35.0 / 384, b3 = 500.0 / 1113,
                     b4 = 125.0 / 192, b5 = -2187.0 / 6784, b6 = 11.0 / 84;
    const Scalar e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                     e6 = 22.0 / 525, e7 = -1.0 / 40;
    const Scalar rtol = static_cast<Scalar>(spec_.rk45_rel_tol);
    const Scalar atol = static_cast<Scalar>(spec_.rk45_abs_tol);
    Scalar t = 0;
    Scalar dt = std::min<Scalar>(h, static_cast<Scalar>(spec_.step));
    f(x, k1_);
    long steps = 0;
    while (t < h) {
      if (++steps > spec_.rk45_max_steps) throw IntegrationFailed("rk45: step budget exhausted");
      bool last = false;
      if (t + dt >= h * (1 - Scalar(1e-12))) {
        dt = h - t;
        last = true;
      }
      tmp_ = x + dt * (a21 * k1_);
      f(tmp_, k2_);
      tmp_ = x + dt * (a31 * k1_ + a32 * k2_);
      f(tmp_, k3_);
      tmp_ = x + dt * (a41 * k1_ + a42 * k2_ + a43 * k3_);
      f(tmp_, k4_);
      tmp_ = x + dt * (a51 * k1_ + a52 * k2_ + a53 * k3_ + a54 * k4_);
      f(tmp_, k5_);
      tmp_ = x + dt * (a61 * k1_ + a62 * k2_ + a63 * k3_ + a64 * k4_ + a65 * k5_);
      f(tmp_, k6_);
      y_ = x + dt * (b1 * k1_ + b3 * k3_ + b4 * k4_ + b5 * k5_ + b6 * k6_);
      f(y_, k7_);
      delta_ = dt * (e1 * k1_ + e3 * k3_ + e4 * k4_ + e5 * k5_ + e6 * k6_ + e7 * k7_);
      Scalar err = 0;
      for (Eigen::Index i = 0; i < x.size(); ++i) {
        const Scalar sc = atol + rtol * std::max(std::abs(x[i]), std::abs(y_[i]));
        const Scalar r = delta_[i] / sc;
        err += r * r;
      }
      err = std::sqrt(err / static_cast<Scalar>(x.size()));
      if (!std::isfinite(err)) {
        dt /= 10;
      } else if (err <= 1) {
        t = last ? h : t + dt;
        x = y_;
        k1_ = k7_;
        const Scalar fac = err == 0 ? Scalar(5) : std::clamp<Scalar>(Scalar(0.9) * std::pow(err, Scalar(-0.2)), Scalar(0.2), Scalar(5));
        dt *= fac;
      } else {
        dt *= std::max<Scalar>(Scalar(0.2), Scalar(0.9) * std::pow(err, Scalar(-0.2)));
      }
      if (dt <= std::numeric_limits<Scalar>::epsilon() * std::max<Scalar>(h, 1) * 16 && t < h)
        throw IntegrationFailed("rk45: step size underflow");
    }
  }

  Field field_;
  IntegratorSpec spec_;
  VectorType k1_, k2_, k3_, k4_, k5_, k6_, k7_, tmp_, y_, res_, delta_;
  MatrixType jac_;
  long evaluations_ = 0;
};

}  // namespace enkf
