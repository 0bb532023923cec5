#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include "json.hpp"

#include "streamgp/kernel.hpp"
#include "streamgp/selection.hpp"

namespace streamgp {

/// Setting of the inducing-point count bound: N points uniform on [0, a]^D,
/// lengthscale l, threshold rho.
struct BoundParams {
  std::size_t n = 0;
  Eigen::Index dim = 1;
  double side = 1.0;
  double lengthscale = 1.0;
  double rho = 0.5;

  void validate() const;
  /// (l sqrt(-D log rho) / 2)^D, recomputed on every call.
  double alpha() const;
  /// a^D
  double volume() const;
  /// alpha >= a^D: a single acceptance ball covers the cube and the closed
  /// form no longer applies.
  bool degenerate() const { return alpha() >= volume(); }
};

/// Thrown by theorem1_bound in the degenerate regime.
class DegenerateBound : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// (a^D - (a^D - alpha)^{N+1}) / alpha
double theorem1_bound(const BoundParams& p);
/// a^D / alpha, the N -> infinity limit.
double theorem1_limit(const BoundParams& p);

/// Expected count after p.n further points under the birth chain that
/// starts from one inducing point and moves k -> k+1 with probability
/// max(1 - k alpha / a^D, 0).
double markov_chain_expectation(const BoundParams& p);

/// (N - M)(1 - rho^2 / (1 + M(M-1) rho))
double theorem2_bound(std::size_t n, std::size_t m, double rho);

/// Eigenvalues of a kernel matrix, non-increasing, clamped at zero.
struct SpectrumCache {
  Eigen::VectorXd eigenvalues;
  /// Most negative eigenvalue before clamping.
  double min_raw = 0.0;

  static SpectrumCache of(const Eigen::MatrixXd& k);
  std::size_t size() const { return static_cast<std::size_t>(eigenvalues.size()); }
};

/// (M + 1) * sum_{i > M} lambda_i
double burt_bound(const SpectrumCache& spec, std::size_t m);

/// log e_k(lambda) for non-negative lambda; -infinity when e_k = 0.
double log_elementary_symmetric(const Eigen::VectorXd& lambda, std::size_t k);
double elementary_symmetric(const Eigen::VectorXd& lambda, std::size_t k);

/// log det(K_S) - log e_k(lambda(K)). Returns -infinity when K_S is
/// numerically singular (duplicate rows, for instance).
double kdpp_log_prob(const Eigen::MatrixXd& k, const std::vector<Eigen::Index>& subset);
double kdpp_log_prob(const Eigen::MatrixXd& k, const std::vector<Eigen::Index>& subset,
                     const SpectrumCache& spec);

/// Exact k-DPP sampler. The eigendecomposition is computed once so that
/// repeated draws only pay for the selection and projection phases.
class KdppSampler {
 public:
  explicit KdppSampler(const Eigen::MatrixXd& k);

  /// Sorted indices of one size-k draw.
  std::vector<Eigen::Index> sample(std::size_t k, std::mt19937_64& rng) const;
  /// Eigenvalues above 1e-12 times the largest.
  std::size_t numerical_rank() const { return rank_; }
  std::size_t size() const { return static_cast<std::size_t>(values_.size()); }

 private:
  Eigen::VectorXd values_;   // ascending, clamped at zero
  Eigen::MatrixXd vectors_;
  std::size_t rank_ = 0;
};

std::vector<Eigen::Index> kdpp_sample(const Eigen::MatrixXd& k, std::size_t size,
                                      std::uint64_t seed);

struct BoundReport {
  std::size_t n = 0;
  std::size_t m = 0;
  Eigen::Index dim = 0;
  double side = 0.0;
  double lengthscale = 0.0;
  double rho = 0.0;
  double alpha = 0.0;
  /// alpha / a^D; the count bound assumes this is small.
  double alpha_ratio = 0.0;
  double lambda_max_kz = 0.0;
  std::vector<double> eigenvalues;
  double empirical_frobenius = 0.0;
  double empirical_trace = 0.0;
  /// Empty in the degenerate regime.
  std::optional<double> theorem1;
  double theorem1_limit = 0.0;
  double theorem2 = 0.0;
  /// Empty when M >= N.
  std::optional<double> burt;
  double tolerance = 0.0;
  bool holds = true;

  nlohmann::json to_json() const;
  static BoundReport from_json(const nlohmann::json& j);
  bool operator==(const BoundReport&) const = default;
};

/// The empirical residual exceeded theorem2 + tolerance.
class BoundViolation : public std::runtime_error {
 public:
  explicit BoundViolation(BoundReport report);
  const BoundReport& report() const { return report_; }

 private:
  BoundReport report_;
};

/// Compares the Frobenius residual of the Nystrom approximation on Z with
/// the separation-based bound and reports the eigenvalue-tail bound
/// alongside. Requires v = 1. `side` defaults to the longest edge of the
/// bounding box of X. The comparison allows 1e-8 * N of rounding slack.
BoundReport verify_bounds(const Eigen::MatrixXd& x, const InducingPointSet& z,
                          const KernelConfig& theta, double rho,
                          std::optional<double> side = std::nullopt);

}  // namespace streamgp
