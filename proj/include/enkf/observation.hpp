#pragma once

#include <algorithm>
#include <string>
#include <utility>
#include <vector>

#include "enkf/rng.hpp"
#include "enkf/types.hpp"

namespace enkf {

/// Linear observation operator reduced to the canonical frame in which the
/// noise covariance is the identity and H = (H0, 0) with H0 = diag(h_1..h_q),
/// h_i > 0. With Gamma^{-1/2} H_raw = Phi Lambda Psi^T, signals are rotated
/// by Psi^T and observations by Phi^T Gamma^{-1/2}; observation rows with
/// zero singular value carry no signal information and are dropped.
template <typename Scalar = double>
class ObservationOperator {
 public:
  using VectorType = Vector<Scalar>;
  using MatrixType = Matrix<Scalar>;

  static constexpr double kRankCutoff = 1e-12;
  static constexpr double kMinGammaEigenvalue = 1e-12;

  /// Whitens (H_raw, Gamma). Throws SingularGamma for near-singular Gamma.
  static ObservationOperator build(const MatrixType& h_raw, const MatrixType& gamma) {
    const Eigen::Index q_raw = h_raw.rows();
    const Eigen::Index d = h_raw.cols();
    if (gamma.rows() != q_raw || gamma.cols() != q_raw)
      throw InvalidArgument("observation noise covariance must be q x q with q = rows of H");
    if (q_raw == 0 || d == 0) throw InvalidArgument("observation operator must be non-empty");

    ObservationOperator op;
    op.h_raw_ = h_raw;
    op.gamma_ = gamma;
    op.dim_ = d;

    const bool diagonal_gamma = gamma.isDiagonal(0);
    if (diagonal_gamma) {
      const VectorType g = gamma.diagonal();
      if (g.minCoeff() < Scalar(kMinGammaEigenvalue))
        throw SingularGamma("observation noise covariance is singular (min eigenvalue " +
                            std::to_string(static_cast<double>(g.minCoeff())) + ")");
      op.gamma_sqrt_ = g.cwiseSqrt().asDiagonal();
      op.gamma_inv_sqrt_ = g.cwiseSqrt().cwiseInverse().asDiagonal();
    } else {
      if (!gamma.isApprox(gamma.transpose(), Scalar(1e-12)))
        throw InvalidArgument("observation noise covariance must be symmetric");
      Eigen::SelfAdjointEigenSolver<MatrixType> eig(gamma);
      if (eig.eigenvalues().minCoeff() < Scalar(kMinGammaEigenvalue))
        throw SingularGamma("observation noise covariance is singular (min eigenvalue " +
                            std::to_string(static_cast<double>(eig.eigenvalues().minCoeff())) + ")");
      op.gamma_sqrt_ = eig.operatorSqrt();
      op.gamma_inv_sqrt_ = eig.operatorInverseSqrt();
    }

    const MatrixType w = op.gamma_inv_sqrt_ * h_raw;
    if (op.try_canonical(w)) return op;

    Eigen::JacobiSVD<MatrixType> svd(w, Eigen::ComputeThinU | Eigen::ComputeFullV);
    const VectorType& sv = svd.singularValues();
    const Scalar smax = sv.size() > 0 ? sv[0] : Scalar(0);
    Eigen::Index rank = 0;
    while (rank < sv.size() && smax > 0 && sv[rank] >= Scalar(kRankCutoff) * smax) ++rank;
    if (rank == 0) throw InvalidArgument("observation operator has no observed directions");

    MatrixType left = svd.matrixU().leftCols(rank);
    MatrixType right = svd.matrixV().leftCols(rank);
    // Sign convention: the largest-magnitude entry of each right singular
    // vector is positive.
    for (Eigen::Index i = 0; i < rank; ++i) {
      Eigen::Index arg = 0;
      right.col(i).cwiseAbs().maxCoeff(&arg);
      if (right(arg, i) < 0) {
        right.col(i) = -right.col(i);
        left.col(i) = -left.col(i);
      }
    }
    op.left_ = std::move(left);
    op.h0_ = sv.head(rank);
    op.rotation_ = complete_basis(right, d);
    op.identity_rotation_ = op.rotation_.isIdentity(0);
    op.finish();
    return op;
  }

  /// Operator already in canonical form: H = (diag(h), 0), identity noise.
  /// Entries of h may be zero here (test operators for the unobserved limit).
  static ObservationOperator canonical(const VectorType& h, Eigen::Index d) {
    if (h.size() > d) throw InvalidArgument("more observed coordinates than state dimension");
    ObservationOperator op;
    op.dim_ = d;
    op.h0_ = h;
    op.h_raw_ = MatrixType::Zero(h.size(), d);
    op.h_raw_.leftCols(h.size()) = h.asDiagonal();
    op.gamma_ = MatrixType::Identity(h.size(), h.size());
    op.gamma_sqrt_ = op.gamma_;
    op.gamma_inv_sqrt_ = op.gamma_;
    op.left_ = op.gamma_;
    op.rotation_ = MatrixType::Identity(d, d);
    op.identity_rotation_ = true;
    op.finish();
    return op;
  }

  Eigen::Index state_dim() const { return dim_; }
  Eigen::Index obs_dim() const { return h0_.size(); }
  /// Diagonal entries h_1..h_q of H0.
  const VectorType& h0() const { return h0_; }
  /// Minimum eigenvalue of H0 H0^T.
  Scalar rho0() const { return rho0_; }
  /// Spectral norm of the canonical H.
  Scalar norm() const { return h0_.size() ? h0_.cwiseAbs().maxCoeff() : Scalar(0); }
  /// Canonical q x d matrix (H0, 0).
  MatrixType h_white() const {
    MatrixType h = MatrixType::Zero(obs_dim(), dim_);
    h.leftCols(obs_dim()) = h0_.asDiagonal();
    return h;
  }
  /// Orthogonal Psi; canonical coordinates are Psi^T u.
  const MatrixType& rotation() const { return rotation_; }
  bool identity_rotation() const { return identity_rotation_; }

  const MatrixType& h_raw() const { return h_raw_; }
  const MatrixType& gamma() const { return gamma_; }

  template <typename Derived>
  MatrixType to_frame(const Eigen::MatrixBase<Derived>& u) const {
    if (identity_rotation_) return u;
    return rotation_.transpose() * u;
  }
  template <typename Derived>
  MatrixType from_frame(const Eigen::MatrixBase<Derived>& u) const {
    if (identity_rotation_) return u;
    return rotation_ * u;
  }

  /// Maps a raw observation Z to canonical coordinates Phi^T Gamma^{-1/2} Z.
  VectorType whiten_observation(const VectorType& z_raw) const { return left_.transpose() * (gamma_inv_sqrt_ * z_raw); }

  /// H applied to canonical-frame columns: rows 0..q-1 scaled by h_i.
  template <typename Derived>
  MatrixType apply_canonical(const Eigen::MatrixBase<Derived>& frame_states) const {
    return h0_.asDiagonal() * frame_states.topRows(obs_dim());
  }

  /// Reconstructs (H_raw, Gamma) from the stored whitening factors.
  std::pair<MatrixType, MatrixType> unwhiten() const {
    MatrixType h = gamma_sqrt_ * left_ * h0_.asDiagonal() * rotation_.leftCols(obs_dim()).transpose();
    MatrixType g = gamma_sqrt_ * gamma_sqrt_;
    return {std::move(h), std::move(g)};
  }

 private:
  bool try_canonical(const MatrixType& w) {
    const Eigen::Index q = w.rows();
    if (q > dim_) return false;
    if (!w.rightCols(dim_ - q).isZero(0)) return false;
    const MatrixType block = w.leftCols(q);
    if (!block.isDiagonal(0) || !(block.diagonal().array() > 0).all()) return false;
    h0_ = block.diagonal();
    left_ = MatrixType::Identity(q, q);
    rotation_ = MatrixType::Identity(dim_, dim_);
    identity_rotation_ = true;
    finish();
    return true;
  }

  void finish() {
    rho0_ = h0_.size() ? h0_.cwiseAbs2().minCoeff() : Scalar(0);
  }

  // Extends the orthonormal columns of `basis` to an orthogonal d x d matrix,
  // greedily taking the standard basis vector with the largest residual.
  static MatrixType complete_basis(const MatrixType& basis, Eigen::Index d) {
    MatrixType out(d, d);
    const Eigen::Index r = basis.cols();
    out.leftCols(r) = basis;
    std::vector<bool> used(static_cast<std::size_t>(d), false);
    for (Eigen::Index c = r; c < d; ++c) {
      Eigen::Index best = -1;
      Scalar best_norm = -1;
      VectorType best_vec;
      for (Eigen::Index j = 0; j < d; ++j) {
        if (used[static_cast<std::size_t>(j)]) continue;
        VectorType v = VectorType::Unit(d, j);
        for (int pass = 0; pass < 2; ++pass) v -= out.leftCols(c) * (out.leftCols(c).transpose() * v);
        const Scalar n = v.norm();
        if (n > best_norm + Scalar(1e-12)) {
          best = j;
          best_norm = n;
          best_vec = std::move(v);
        }
      }
      used[static_cast<std::size_t>(best)] = true;
      out.col(c) = best_vec / best_norm;
    }
    return out;
  }

  Eigen::Index dim_ = 0;
  MatrixType h_raw_, gamma_, gamma_sqrt_, gamma_inv_sqrt_;
  MatrixType left_;
  VectorType h0_;
  MatrixType rotation_;
  bool identity_rotation_ = true;
  Scalar rho0_ = 0;
};

template <typename Scalar>
ObservationOperator<Scalar> build_operator(const Matrix<Scalar>& h_raw, const Matrix<Scalar>& gamma) {
  return ObservationOperator<Scalar>::build(h_raw, gamma);
}

/// One observation in canonical coordinates. `perturbed` holds K columns
/// Z + xi^(k) for the stochastic EnKF and is empty for square-root filters.
template <typename Scalar = double>
struct Observation {
  Vector<Scalar> z;
  Matrix<Scalar> perturbed;
  long step = 0;

  bool has_perturbations() const { return perturbed.cols() > 0; }
};

/// Z = H (Psi^T u) + noise, with the noise supplied explicitly.
template <typename Scalar>
Observation<Scalar> observe_with_noise(const ObservationOperator<Scalar>& op, const Vector<Scalar>& truth,
                                       const Vector<Scalar>& noise, long step = 0) {
  Observation<Scalar> obs;
  obs.z = op.apply_canonical(op.to_frame(truth)).col(0) + noise;
  obs.step = step;
  return obs;
}

template <typename Scalar>
Observation<Scalar> observe(const ObservationOperator<Scalar>& op, const Vector<Scalar>& truth, RngStream& rng,
                            long step = 0) {
  Vector<Scalar> noise(op.obs_dim());
  rng.fill_normal(noise);
  return observe_with_noise(op, truth, noise, step);
}

/// Adds K i.i.d. N(0, I) perturbations, drawn member by member.
template <typename Scalar>
void perturb_observation(Observation<Scalar>& obs, Eigen::Index members, RngStream& rng) {
  obs.perturbed.resize(obs.z.size(), members);
  rng.fill_normal(obs.perturbed);
  obs.perturbed.colwise() += obs.z;
}

template <typename Scalar>
Observation<Scalar> observe(const ObservationOperator<Scalar>& op, const Vector<Scalar>& truth, Eigen::Index members,
                            bool perturb, RngStream& rng, long step = 0) {
  Observation<Scalar> obs = observe(op, truth, rng, step);
  if (perturb) perturb_observation(obs, members, rng);
  return obs;
}

}  // namespace enkf
