#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "streamgp/data.hpp"
#include "streamgp/selection.hpp"
#include "streamgp/svgp.hpp"

namespace streamgp {

/// One step of the recursion: q_{t-1} on (Z_{t-1}, theta_{t-1}) and the
/// candidate q_t on (Z_t, theta_t) for the batch D_t. `prev` is empty at
/// t = 1.
struct StreamStep {
  std::optional<VariationalState> prev;
  VariationalState next;
  DatasetBatch batch;

  /// True when every row of prev.z also appears in next.z, as happens when
  /// Z only grows through OIPS. Optimizer moves break this.
  bool nested() const;
};

/// Cross terms between the old and new inducing sets, taken under theta_t.
///
/// D_{t-1} = (Sigma_{t-1}^{-1} - K'_{Z_{t-1}}^{-1})^{-1} is not formed; the
/// recursion only needs its inverse, which is VariationalState::lik_precision.
struct StreamWorkspace {
  /// K_{Z_{t-1} Z_t} K_{Z_t}^{-1}
  Eigen::MatrixXd kappa;
  /// Covariance of q_t(u_{t-1}):
  ///   K_{Z_{t-1}} - K_{ab} K_b^{-1} K_{ba} + K_{ab} K_b^{-1} Sigma_t K_b^{-1} K_{ba}
  Eigen::MatrixXd ktilde_prev;
  /// D_{t-1}^{-1}
  Eigen::MatrixXd lik_precision_prev;
};

StreamWorkspace make_workspace(const StreamStep& step);

/// Closed-form maximizer of the online ELBO for q_t on (z_t, theta_t).
///
/// With a = Z_{t-1}, b = Z_t and E = D_{t-1}^{-1}:
///   G = K_bX K_Xb / s2 + K_ba E K_ab,   r = K_bX y / s2 + K_ba eta1_{t-1}
///   Sigma_t = K_b (K_b + G)^{-1} K_b,  mu_t = K_b (K_b + G)^{-1} r
/// which never inverts D_{t-1} or Sigma_{t-1}.
VariationalState stream_update(const std::optional<VariationalState>& prev,
                               const DatasetBatch& batch,
                               const InducingPointSet& z_t,
                               const KernelConfig& theta_t,
                               double noise_var = kDefaultNoiseVar,
                               const JitterPolicy& jitter = {});

/// Same optimum assembled through natural parameters:
///   eta1_t = kappa_Xb^T y / s2 + kappa_ab^T eta1_{t-1}
///   eta2_t = -(K_b^{-1} + kappa_Xb^T kappa_Xb / s2 + kappa_ab^T E kappa_ab) / 2
VariationalState stream_update_natural(const std::optional<VariationalState>& prev,
                                       const DatasetBatch& batch,
                                       const InducingPointSet& z_t,
                                       const KernelConfig& theta_t,
                                       double noise_var = kDefaultNoiseVar,
                                       const JitterPolicy& jitter = {});

struct OnlineElboTerms {
  /// -KL(q_t(u_t) || p(u_t | theta_t))
  double neg_kl_prior = 0.0;
  /// E_q[log p(y_t | f_t)]
  double expected_ll = 0.0;
  /// KL(q_t(u_{t-1}) || p(u_{t-1} | theta_{t-1})); 0 at t = 1.
  double kl_old_prior = 0.0;
  /// KL(q_t(u_{t-1}) || q_{t-1}(u_{t-1})); 0 at t = 1.
  double kl_old_posterior = 0.0;

  double total() const {
    return neg_kl_prior + expected_ll + kl_old_prior - kl_old_posterior;
  }
};

/// All four terms evaluated separately.
OnlineElboTerms online_elbo_terms(const StreamStep& step);

/// KL(q_t(u_{t-1}) || p) - KL(q_t(u_{t-1}) || q_{t-1}) in combined form,
/// where the log-determinant of q_t(u_{t-1}) cancels.
double kl_correction(const StreamStep& step);

/// -KL(q_t || p) + E[log p(y_t | f)] + kl_correction(step).
double online_elbo(const StreamStep& step);

/// d online_elbo / d Z_t at fixed (mu_t, Sigma_t) and fixed q_{t-1}. At the
/// closed-form optimum this is also the gradient of the collapsed bound.
Eigen::MatrixXd elbo_grad_Z(const StreamStep& step);

/// d online_elbo / d theta_t at fixed (mu_t, Sigma_t); q_{t-1} and
/// theta_{t-1} are constants.
double hyper_grad(const StreamStep& step, KernelParam wrt);

struct AdamParams {
  double alpha = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  Eigen::MatrixXd m;
  Eigen::MatrixXd v;
  int t = 0;
};

/// One ascent step: Z' = Z + alpha * mhat / (sqrt(vhat) + eps). An empty
/// state is initialized to zeros of Z's shape.
Eigen::MatrixXd adam_step(const Eigen::MatrixXd& z, const Eigen::MatrixXd& grad,
                          AdamState& state, const AdamParams& params = {});

/// Natural-gradient SVI step on a fixed Z with step size lr:
///   eta1 <- eta1 + lr ((N/|B|) kappa^T y / s2 - eta1)
///   eta2 <- eta2 + lr (-(K_Z^{-1} + (N/|B|) kappa^T kappa / s2) / 2 - eta2)
/// Throws InvalidArgument if z differs from state.z.
VariationalState svi_update(const VariationalState& state, const DatasetBatch& batch,
                            const InducingPointSet& z, std::size_t n_total,
                            double lr);

enum class StreamMethod { oips, oips_opt, kmeans_opt, grid };

StreamMethod parse_stream_method(const std::string& s);
const char* to_string(StreamMethod m);

constexpr int kDefaultOptSteps = 20;
constexpr double kDefaultRho = 0.6;
constexpr Eigen::Index kDefaultInducing = 25;
constexpr Eigen::Index kDefaultPointsPerDim = 25;

struct StreamConfig {
  StreamMethod method = StreamMethod::oips;
  KernelConfig theta;
  double noise_var = kDefaultNoiseVar;
  JitterPolicy jitter;
  double rho = kDefaultRho;                             // oips, oips-opt
  Eigen::Index n_inducing = kDefaultInducing;           // kmeans-opt
  int kmeans_iters = kDefaultKmeansIters;               // kmeans-opt
  Eigen::Index points_per_dim = kDefaultPointsPerDim;   // grid
  int opt_steps = kDefaultOptSteps;                     // *-opt
  AdamParams adam;
  std::uint64_t seed = 0;
};

struct BatchMetrics {
  std::size_t batch_index = 0;
  std::size_t n_seen = 0;
  Eigen::Index m = 0;
  double elbo = 0.0;
  double test_nll = 0.0;
  double test_rmse = 0.0;
  double elapsed_ms = 0.0;
  /// Predictive variances clamped at zero on the test set.
  std::size_t clamped = 0;
};

struct StreamResult {
  std::vector<BatchMetrics> metrics;
  VariationalState final_state;
};

/// Per batch: select or extend Z, stream_update, then for the *-opt methods
/// `opt_steps` ADAM steps on Z with a fresh stream_update after each move
/// (the ADAM moments restart with every batch). oips-opt keeps running OIPS
/// on the moved set for later batches; kmeans-opt clusters the first batch
/// only; grid re-spans the bounds of all data seen so far.
StreamResult run_stream(const StreamingDataset& data, const StreamConfig& cfg);

/// Columns batch_index,n_seen,M,elbo,test_nll,test_rmse,elapsed_ms. When
/// `timing` is false elapsed_ms is written as NA so the file only depends on
/// the inputs.
void write_metrics_csv(const std::filesystem::path& path,
                       const std::vector<BatchMetrics>& metrics, bool timing);

}  // namespace streamgp
