#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace enkf {

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

using Vec = Vector<double>;
using Mat = Matrix<double>;

// Error hierarchy. Divergence is never an error: non-finite states flow
// through as values and are detected by the stability monitors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IntegrationFailed : public Error {
 public:
  using Error::Error;
};

class ImplicitSolveFailed : public IntegrationFailed {
 public:
  ImplicitSolveFailed(int iterations, double residual)
      : IntegrationFailed("implicit Euler: Newton iteration did not converge after " +
              std::to_string(iterations) + " iterations (residual " +
              std::to_string(residual) + ")"),
        iterations_(iterations),
        residual_(residual) {}
  int iterations() const { return iterations_; }
  double residual() const { return residual_; }

 private:
  int iterations_;
  double residual_;
};

class CholeskyFailed : public Error {
 public:
  using Error::Error;
};

class SingularGamma : public Error {
 public:
  using Error::Error;
};

class NonFiniteStatistics : public Error {
 public:
  using Error::Error;
};

class DivergedClimatologyRun : public Error {
 public:
  using Error::Error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Magnitude above which an entry counts as machine infinity.
inline constexpr double kOverflowMagnitude = 1e300;

template <typename Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& m) {
  using Scalar = typename Derived::Scalar;
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      const Scalar v = m(i, j);
      if (!std::isfinite(v) || std::abs(static_cast<double>(v)) > kOverflowMagnitude) return false;
    }
  }
  return true;
}

}  // namespace enkf
