#pragma once

#include <utility>

#include "enkf/types.hpp"

namespace enkf {

/// K members stored as the columns of a d x K matrix.
template <typename Scalar = double>
class Ensemble {
 public:
  using MatrixType = Matrix<Scalar>;
  using VectorType = Vector<Scalar>;

  Ensemble() = default;
  explicit Ensemble(MatrixType members) : members_(std::move(members)) {
    if (members_.cols() < 2) throw InvalidArgument("an ensemble needs at least two members");
  }

  Eigen::Index dim() const { return members_.rows(); }
  Eigen::Index size() const { return members_.cols(); }

  const MatrixType& members() const { return members_; }
  MatrixType& members() { return members_; }
  auto member(Eigen::Index k) const { return members_.col(k); }
  auto member(Eigen::Index k) { return members_.col(k); }

  VectorType mean() const { return members_.rowwise().mean(); }

  /// d x K anomaly matrix [V_k - mean].
  MatrixType spread() const { return members_.colwise() - mean(); }

  /// Sample covariance with the 1/(K-1) normalization.
  MatrixType covariance() const {
    const MatrixType s = spread();
    return (s * s.transpose()) / static_cast<Scalar>(size() - 1);
  }

  bool finite() const { return all_finite(members_); }

  /// Sum of squared member norms.
  Scalar energy() const { return members_.squaredNorm(); }

 private:
  MatrixType members_;
};

}  // namespace enkf
