#pragma once

#include <Eigen/Dense>

namespace streamgp {

/// Isotropic squared-exponential kernel k(x, x') = v exp(-|x - x'|^2 / l^2).
struct KernelConfig {
  double lengthscale = 1.0;
  double variance = 1.0;

  void validate() const;
  bool operator==(const KernelConfig&) const = default;
};

/// Diagonal regularization for kernel Gram matrices. The added value is
/// `relative * variance`, so the jittered Gram is still linear in v.
struct JitterPolicy {
  double relative = 1e-8;
  int max_attempts = 6;

  double absolute(const KernelConfig& cfg) const {
    return relative * cfg.variance;
  }
  void validate() const;
  bool operator==(const JitterPolicy&) const = default;
};

enum class KernelParam { lengthscale, variance };

/// Plain left-to-right sum, shared by every kernel evaluation so that
/// correlations computed in different modules agree bitwise.
template <typename A, typename B>
double squared_distance(const A& a, const B& b) {
  double s = 0.0;
  for (Eigen::Index d = 0; d < a.size(); ++d) {
    const double diff = a(d) - b(d);
    s += diff * diff;
  }
  return s;
}

const char* to_string(KernelParam p);

double se_kernel(const Eigen::Ref<const Eigen::VectorXd>& x,
                 const Eigen::Ref<const Eigen::VectorXd>& xp,
                 const KernelConfig& cfg);

/// k(x, x') / v, the quantity compared against the OIPS threshold.
double se_correlation(const Eigen::Ref<const Eigen::VectorXd>& x,
                      const Eigen::Ref<const Eigen::VectorXd>& xp,
                      double lengthscale);

/// Entry (i, j) is se_kernel(a.row(i), b.row(j)).
Eigen::MatrixXd kernel_matrix(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                              const KernelConfig& cfg);
/// Symmetric Gram matrix of the rows of `a` (exactly symmetric, diagonal = v).
Eigen::MatrixXd kernel_matrix(const Eigen::MatrixXd& a, const KernelConfig& cfg);

/// K(a, a) + jitter * I.
Eigen::MatrixXd jittered_gram(const Eigen::MatrixXd& a, const KernelConfig& cfg,
                              const JitterPolicy& jitter);

/// Median of the N(N-1)/2 pairwise distances between the rows of X. For an
/// even number of pairs the lower middle value is returned.
double median_heuristic(const Eigen::MatrixXd& x);

/// dk(x, x') / d(param).
double kernel_grad(const Eigen::Ref<const Eigen::VectorXd>& x,
                   const Eigen::Ref<const Eigen::VectorXd>& xp,
                   const KernelConfig& cfg, KernelParam wrt);

/// dk(x, x') / dx.
Eigen::VectorXd kernel_grad_location(const Eigen::Ref<const Eigen::VectorXd>& x,
                                     const Eigen::Ref<const Eigen::VectorXd>& xp,
                                     const KernelConfig& cfg);

/// Elementwise derivative of kernel_matrix(a, b) w.r.t. a hyper-parameter.
Eigen::MatrixXd kernel_matrix_grad(const Eigen::MatrixXd& a,
                                   const Eigen::MatrixXd& b,
                                   const KernelConfig& cfg, KernelParam wrt);

}  // namespace streamgp
