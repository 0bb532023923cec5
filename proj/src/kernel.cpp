#include "streamgp/kernel.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "streamgp/errors.hpp"

namespace streamgp {

namespace {

void check_same_dim(Eigen::Index a, Eigen::Index b, const char* where) {
  if (a != b) {
    throw InvalidArgument(std::string(where) + ": dimension mismatch (" +
                          std::to_string(a) + " vs " + std::to_string(b) + ")");
  }
}

}  // namespace

void KernelConfig::validate() const {
  if (!(lengthscale > 0.0) || !std::isfinite(lengthscale)) {
    throw InvalidArgument("kernel lengthscale must be positive and finite");
  }
  if (!(variance > 0.0) || !std::isfinite(variance)) {
    throw InvalidArgument("kernel variance must be positive and finite");
  }
}

void JitterPolicy::validate() const {
  if (!(relative >= 0.0) || !std::isfinite(relative)) {
    throw InvalidArgument("jitter must be non-negative");
  }
  if (max_attempts < 1) {
    throw InvalidArgument("jitter max_attempts must be at least 1");
  }
}

const char* to_string(KernelParam p) {
  switch (p) {
    case KernelParam::lengthscale:
      return "lengthscale";
    case KernelParam::variance:
      return "variance";
  }
  return "?";
}

double se_correlation(const Eigen::Ref<const Eigen::VectorXd>& x,
                      const Eigen::Ref<const Eigen::VectorXd>& xp,
                      double lengthscale) {
  check_same_dim(x.size(), xp.size(), "se_kernel");
  return std::exp(-squared_distance(x, xp) * (1.0 / (lengthscale * lengthscale)));
}

double se_kernel(const Eigen::Ref<const Eigen::VectorXd>& x,
                 const Eigen::Ref<const Eigen::VectorXd>& xp,
                 const KernelConfig& cfg) {
  return cfg.variance * se_correlation(x, xp, cfg.lengthscale);
}

Eigen::MatrixXd kernel_matrix(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                              const KernelConfig& cfg) {
  check_same_dim(a.cols(), b.cols(), "kernel_matrix");
  const double inv_l2 = 1.0 / (cfg.lengthscale * cfg.lengthscale);
  Eigen::MatrixXd k(a.rows(), b.rows());
  for (Eigen::Index j = 0; j < b.rows(); ++j) {
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
      k(i, j) = cfg.variance *
                std::exp(-squared_distance(a.row(i), b.row(j)) * inv_l2);
    }
  }
  return k;
}

Eigen::MatrixXd kernel_matrix(const Eigen::MatrixXd& a, const KernelConfig& cfg) {
  const double inv_l2 = 1.0 / (cfg.lengthscale * cfg.lengthscale);
  const Eigen::Index n = a.rows();
  Eigen::MatrixXd k(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    k(j, j) = cfg.variance;
    for (Eigen::Index i = j + 1; i < n; ++i) {
      const double v = cfg.variance *
                       std::exp(-squared_distance(a.row(i), a.row(j)) * inv_l2);
      k(i, j) = v;
      k(j, i) = v;
    }
  }
  return k;
}

Eigen::MatrixXd jittered_gram(const Eigen::MatrixXd& a, const KernelConfig& cfg,
                              const JitterPolicy& jitter) {
  Eigen::MatrixXd k = kernel_matrix(a, cfg);
  k.diagonal().array() += jitter.absolute(cfg);
  return k;
}

double median_heuristic(const Eigen::MatrixXd& x) {
  const Eigen::Index n = x.rows();
  if (n < 2) {
    throw InvalidArgument("median_heuristic: need at least two points");
  }
  std::vector<double> dist;
  dist.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = j + 1; i < n; ++i) {
      dist.push_back(std::sqrt(squared_distance(x.row(i), x.row(j))));
    }
  }
  const auto mid = dist.begin() + static_cast<std::ptrdiff_t>((dist.size() - 1) / 2);
  std::nth_element(dist.begin(), mid, dist.end());
  if (!(*mid > 0.0)) {
    throw InvalidArgument(
        "median_heuristic: median pairwise distance is zero, lengthscale "
        "must be positive");
  }
  return *mid;
}

double kernel_grad(const Eigen::Ref<const Eigen::VectorXd>& x,
                   const Eigen::Ref<const Eigen::VectorXd>& xp,
                   const KernelConfig& cfg, KernelParam wrt) {
  check_same_dim(x.size(), xp.size(), "kernel_grad");
  const double r2 = squared_distance(x, xp);
  const double l = cfg.lengthscale;
  const double corr = std::exp(-r2 / (l * l));
  switch (wrt) {
    case KernelParam::variance:
      return corr;
    case KernelParam::lengthscale:
      return cfg.variance * corr * 2.0 * r2 / (l * l * l);
  }
  return 0.0;
}

Eigen::VectorXd kernel_grad_location(const Eigen::Ref<const Eigen::VectorXd>& x,
                                     const Eigen::Ref<const Eigen::VectorXd>& xp,
                                     const KernelConfig& cfg) {
  const double k = se_kernel(x, xp, cfg);
  const double l2 = cfg.lengthscale * cfg.lengthscale;
  return (-2.0 * k / l2) * (x - xp);
}

Eigen::MatrixXd kernel_matrix_grad(const Eigen::MatrixXd& a,
                                   const Eigen::MatrixXd& b,
                                   const KernelConfig& cfg, KernelParam wrt) {
  check_same_dim(a.cols(), b.cols(), "kernel_matrix_grad");
  const double l = cfg.lengthscale;
  const double inv_l2 = 1.0 / (l * l);
  Eigen::MatrixXd j(a.rows(), b.rows());
  for (Eigen::Index c = 0; c < b.rows(); ++c) {
    for (Eigen::Index r = 0; r < a.rows(); ++r) {
      const double r2 = squared_distance(a.row(r), b.row(c));
      const double corr = std::exp(-r2 * inv_l2);
      j(r, c) = wrt == KernelParam::variance
                    ? corr
                    : cfg.variance * corr * 2.0 * r2 * inv_l2 / l;
    }
  }
  return j;
}

}  // namespace streamgp
