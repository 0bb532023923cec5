#include "streamgp/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "streamgp/errors.hpp"

namespace streamgp {

Cholesky::Cholesky(const Eigen::MatrixXd& a, double jitter, int max_attempts) {
  if (a.rows() != a.cols()) {
    throw InvalidArgument("Cholesky: matrix must be square");
  }
  if (a.rows() == 0) {
    throw InvalidArgument("Cholesky: empty matrix");
  }
  if (!(jitter >= 0.0) || max_attempts < 1) {
    throw InvalidArgument("Cholesky: invalid jitter policy");
  }
  if (!a.allFinite()) {
    throw NumericalError("Cholesky: matrix has non-finite entries");
  }
  const double scale = std::max(a.diagonal().cwiseAbs().mean(), 1e-300);
  double current = jitter;
  for (int attempt = 0; attempt < max_attempts; ++attempt) {
    factored_ = a;
    if (current > 0.0) {
      factored_.diagonal().array() += current;
    }
    llt_.compute(factored_);
    if (llt_.info() == Eigen::Success) {
      jitter_ = current;
      return;
    }
    current = current > 0.0 ? current * 10.0 : 1e-10 * scale;
  }
  std::ostringstream msg;
  msg << "Cholesky: matrix of size " << a.rows()
      << " is not positive definite after " << max_attempts
      << " attempt(s), last jitter " << current / 10.0;
  throw NumericalError(msg.str());
}

Eigen::MatrixXd Cholesky::solve(const Eigen::MatrixXd& b) const {
  return llt_.solve(b);
}

Eigen::VectorXd Cholesky::solve(const Eigen::VectorXd& b) const {
  return llt_.solve(b);
}

Eigen::MatrixXd Cholesky::solve_lower(const Eigen::MatrixXd& b) const {
  return llt_.matrixL().solve(b);
}

Eigen::MatrixXd Cholesky::inverse() const {
  const Eigen::Index n = size();
  return symmetrize(llt_.solve(Eigen::MatrixXd::Identity(n, n)));
}

double Cholesky::log_det() const {
  return 2.0 * llt_.matrixLLT().diagonal().array().log().sum();
}

Eigen::MatrixXd Cholesky::matrix_l() const { return llt_.matrixL(); }

double max_relative_difference(const Eigen::MatrixXd& a,
                               const Eigen::MatrixXd& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw InvalidArgument("max_relative_difference: shape mismatch");
  }
  double worst = 0.0;
  for (Eigen::Index j = 0; j < a.cols(); ++j) {
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
      const double denom = std::max(1.0, std::abs(b(i, j)));
      worst = std::max(worst, std::abs(a(i, j) - b(i, j)) / denom);
    }
  }
  return worst;
}

}  // namespace streamgp
