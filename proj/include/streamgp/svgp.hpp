#pragma once

#include <optional>

#include <Eigen/Dense>
#include "json.hpp"

#include "streamgp/kernel.hpp"
#include "streamgp/linalg.hpp"
#include "streamgp/selection.hpp"

namespace streamgp {

constexpr double kDefaultNoiseVar = 0.01;

/// Gaussian q(u) = N(mu, Sigma) over the inducing values at Z, together with
/// its natural parameters eta1 = Sigma^{-1} mu and eta2 = -Sigma^{-1} / 2.
///
/// `lik_precision` is Sigma^{-1} - K_Z^{-1}, the precision contributed by the
/// data absorbed so far. The streaming recursion consumes it directly, so it
/// is kept alongside the moments instead of being re-derived by subtraction.
struct VariationalState {
  InducingPointSet z;
  KernelConfig theta;
  double noise_var = kDefaultNoiseVar;
  JitterPolicy jitter;

  Eigen::VectorXd mu;
  Eigen::MatrixXd sigma;
  Eigen::VectorXd eta1;
  Eigen::MatrixXd eta2;
  Eigen::MatrixXd lik_precision;

  Eigen::Index size() const { return mu.size(); }
  /// K_Z + jitter I under this state's theta.
  Eigen::MatrixXd prior_cov() const;
};

/// q(u) = p(u): mu = 0, Sigma = K_Z + jitter I.
VariationalState prior_state(const InducingPointSet& z, const KernelConfig& theta,
                             double noise_var = kDefaultNoiseVar,
                             const JitterPolicy& jitter = {});

VariationalState state_from_moments(const InducingPointSet& z,
                                    const KernelConfig& theta, double noise_var,
                                    Eigen::VectorXd mu, Eigen::MatrixXd sigma,
                                    const JitterPolicy& jitter = {});

VariationalState state_from_natural(const InducingPointSet& z,
                                    const KernelConfig& theta, double noise_var,
                                    Eigen::VectorXd eta1, Eigen::MatrixXd eta2,
                                    const JitterPolicy& jitter = {});

/// Closed-form optimal q(u) for Gaussian regression on (X, y).
VariationalState optimal_variational(const Eigen::MatrixXd& x,
                                     const Eigen::VectorXd& y,
                                     const InducingPointSet& z,
                                     const KernelConfig& theta,
                                     double noise_var = kDefaultNoiseVar,
                                     const JitterPolicy& jitter = {});

/// KL(q(u) || p(u)).
double kl_to_prior(const VariationalState& state);

/// sum_i E_q[log N(y_i | f_i, noise_var)].
double expected_log_likelihood(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                               const VariationalState& state);

/// -KL(q(u) || p(u)) + expected_log_likelihood.
double elbo(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
            const VariationalState& state);

struct Prediction {
  Eigen::VectorXd mean;
  Eigen::VectorXd latent_var;
  Eigen::VectorXd observed_var;
  /// Entries of latent_var that rounded below zero and were clamped.
  std::size_t clamped = 0;
  /// Most negative pre-clamp latent variance (0 when nothing was clamped).
  double most_negative = 0.0;
  /// A clamped value below -1e-6 v, which rounding alone does not explain.
  bool suspicious = false;
};

Prediction predict(const Eigen::MatrixXd& x_star, const VariationalState& state);

/// Mean over test points of -log N(y_i | mean_i, observed_var_i).
double mean_test_nll(const Prediction& pred, const Eigen::VectorXd& y);
double rmse(const Prediction& pred, const Eigen::VectorXd& y);

/// log N(y | 0, K_X + noise_var I).
double exact_gp_log_evidence(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                             const KernelConfig& theta,
                             double noise_var = kDefaultNoiseVar);

/// Posterior mean of the full GP at x_star.
Eigen::VectorXd exact_gp_posterior_mean(const Eigen::MatrixXd& x,
                                        const Eigen::VectorXd& y,
                                        const Eigen::MatrixXd& x_star,
                                        const KernelConfig& theta,
                                        double noise_var = kDefaultNoiseVar);

struct NystromResidual {
  double frobenius = 0.0;
  double trace = 0.0;
};

/// Norms of the Schur complement K_X - K_XZ K_Z^{-1} K_ZX.
///
/// K_Z is factorized without jitter when it is numerically positive
/// definite; the jitter policy is only used as a fallback. Jitter inflates
/// the residual by roughly N * jitter, which would otherwise be reported as
/// approximation error.
NystromResidual nystrom_residual(const Eigen::MatrixXd& x, const Eigen::MatrixXd& z,
                                 const KernelConfig& theta,
                                 const JitterPolicy& fallback = {});

/// Checkpoint document: {z, theta, noise_var, mu, sigma} plus an optional
/// stream cursor.
struct StreamCursor {
  std::size_t batch_index = 0;
  std::size_t n_seen = 0;
};

nlohmann::json state_to_json(const VariationalState& state,
                             const std::optional<StreamCursor>& cursor = {});
VariationalState state_from_json(const nlohmann::json& doc,
                                 std::optional<StreamCursor>* cursor = nullptr);

}  // namespace streamgp
