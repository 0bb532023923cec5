#pragma once

#include <Eigen/Dense>

namespace streamgp {

/// Lower Cholesky factor of a symmetric positive (semi-)definite matrix.
///
/// The factorization is first attempted with `jitter` on the diagonal. When
/// that fails the jitter is raised tenfold per attempt, starting from
/// 1e-10 times the mean diagonal if `jitter` was zero, until `max_attempts`
/// is exhausted, at which point NumericalError is thrown.
class Cholesky {
 public:
  Cholesky() = default;
  explicit Cholesky(const Eigen::MatrixXd& a, double jitter = 0.0,
                    int max_attempts = 1);

  Eigen::Index size() const { return llt_.matrixLLT().rows(); }
  double jitter() const { return jitter_; }

  /// A^{-1} b
  Eigen::MatrixXd solve(const Eigen::MatrixXd& b) const;
  Eigen::VectorXd solve(const Eigen::VectorXd& b) const;
  /// L^{-1} b
  Eigen::MatrixXd solve_lower(const Eigen::MatrixXd& b) const;
  Eigen::MatrixXd inverse() const;
  double log_det() const;
  Eigen::MatrixXd matrix_l() const;
  /// The matrix that was actually factorized, jitter included.
  const Eigen::MatrixXd& factored() const { return factored_; }

 private:
  Eigen::LLT<Eigen::MatrixXd> llt_;
  Eigen::MatrixXd factored_;
  double jitter_ = 0.0;
};

inline Eigen::MatrixXd symmetrize(const Eigen::MatrixXd& a) {
  return 0.5 * (a + a.transpose());
}

/// Largest |a_ij - b_ij| / max(1, |b_ij|).
double max_relative_difference(const Eigen::MatrixXd& a,
                               const Eigen::MatrixXd& b);

}  // namespace streamgp
