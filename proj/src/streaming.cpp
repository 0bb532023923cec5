#include "streamgp/streaming.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <string>

#include "streamgp/csv.hpp"
#include "streamgp/errors.hpp"
#include "streamgp/linalg.hpp"

namespace streamgp {

namespace {

void check_update_inputs(const std::optional<VariationalState>& prev,
                         const DatasetBatch& batch, const InducingPointSet& z_t,
                         const KernelConfig& theta_t, double noise_var,
                         const JitterPolicy& jitter) {
  if (z_t.empty()) {
    throw InvalidArgument("stream_update: Z_t is empty");
  }
  theta_t.validate();
  jitter.validate();
  if (!(noise_var > 0.0)) {
    throw InvalidArgument("stream_update: noise variance must be positive");
  }
  if (batch.x.rows() != batch.y.size()) {
    throw InvalidArgument("stream_update: batch X and y row counts differ");
  }
  if (batch.x.rows() > 0 && batch.x.cols() != z_t.dim()) {
    throw InvalidArgument("stream_update: batch dimension does not match Z_t");
  }
  if (prev) {
    if (prev->z.dim() != z_t.dim()) {
      throw InvalidArgument("stream_update: Z_{t-1} and Z_t dimensions differ");
    }
    if (prev->lik_precision.rows() != prev->size() ||
        prev->eta1.size() != prev->size()) {
      throw InvalidArgument("stream_update: previous state is incomplete");
    }
  }
}

Cholesky factor_gram(const Eigen::MatrixXd& z, const KernelConfig& theta,
                     const JitterPolicy& jitter) {
  return Cholesky(jittered_gram(z, theta, jitter), 0.0, jitter.max_attempts);
}

double trace_product(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return a.cwiseProduct(b.transpose()).sum();
}

void check_step(const StreamStep& step) {
  const auto& next = step.next;
  if (next.z.empty() || next.mu.size() != next.z.size() ||
      next.sigma.rows() != next.z.size()) {
    throw InvalidArgument("stream step: q_t dimensions are inconsistent");
  }
  if (step.batch.x.rows() != step.batch.y.size()) {
    throw InvalidArgument("stream step: batch X and y row counts differ");
  }
  if (step.prev) {
    if (step.prev->z.dim() != next.z.dim()) {
      throw InvalidArgument("stream step: Z_{t-1} and Z_t dimensions differ");
    }
    if (step.prev->lik_precision.rows() != step.prev->size()) {
      throw InvalidArgument("stream step: previous state is incomplete");
    }
  }
}

/// Partial derivatives of the online ELBO w.r.t. every kernel matrix it
/// reads, at fixed (mu, Sigma).
struct ElboSensitivities {
  Eigen::MatrixXd g_b;   // K_b (jittered)
  Eigen::MatrixXd g_xb;  // K_Xb, N x M_b
  double g_diag = 0.0;   // each k(x_n, x_n) = v
  Eigen::MatrixXd g_ab;  // K_ab, M_a x M_b
  Eigen::MatrixXd g_aa;  // K_a under theta_t (jittered)
  Eigen::MatrixXd k_b;   // unjittered K_b
  Eigen::MatrixXd k_xb;
  Eigen::MatrixXd k_ab;
  Eigen::MatrixXd k_aa_jittered;
  Eigen::MatrixXd k_b_jittered;
};

ElboSensitivities sensitivities(const StreamStep& step) {
  check_step(step);
  const auto& q = step.next;
  const auto& zb = q.z.points;
  const KernelConfig& theta = q.theta;
  const double beta = 1.0 / q.noise_var;

  ElboSensitivities out;
  const Cholesky kb = factor_gram(zb, theta, q.jitter);
  out.k_b_jittered = kb.factored();
  out.k_b = kernel_matrix(zb, theta);
  const Eigen::MatrixXd w = kb.inverse();
  const Eigen::VectorXd m = w * q.mu;
  const Eigen::MatrixXd s = symmetrize(w * q.sigma * w);

  // -KL(q || p(u_b)).
  out.g_b = -0.5 * (w - s - m * m.transpose());

  // Expected log-likelihood.
  const auto n = step.batch.x.rows();
  out.k_xb = n > 0 ? kernel_matrix(step.batch.x, zb, theta)
                   : Eigen::MatrixXd(0, zb.rows());
  if (n > 0) {
    const Eigen::VectorXd r = step.batch.y - out.k_xb * m;
    const Eigen::MatrixXd p = out.k_xb.transpose() * out.k_xb;
    const Eigen::VectorXd sv = w * (out.k_xb.transpose() * r);
    const Eigen::MatrixXd wpw = w * p * w;
    const Eigen::MatrixXd wps = w * p * s;
    out.g_b += -0.5 * beta *
               (2.0 * sv * m.transpose() + wpw - wps - wps.transpose());
    out.g_xb = beta * (r * m.transpose() + out.k_xb * w - out.k_xb * s);
    out.g_diag = -0.5 * beta;
  } else {
    out.g_xb.resize(0, zb.rows());
  }

  // Combined KL correction.
  if (step.prev) {
    const auto& prev = *step.prev;
    const auto& za = prev.z.points;
    const Eigen::MatrixXd& e = prev.lik_precision;
    out.k_ab = kernel_matrix(za, zb, theta);
    out.k_aa_jittered = jittered_gram(za, theta, q.jitter);
    const Eigen::VectorXd c = out.k_ab * m;
    const Eigen::VectorXd g = prev.eta1 - e * c;
    out.g_ab = g * m.transpose() + e * out.k_ab * (w - s);
    const Eigen::MatrixXd h = out.k_ab.transpose() * e * out.k_ab;
    const Eigen::MatrixXd shw = s * h * w;
    out.g_b += -w * out.k_ab.transpose() * g * m.transpose() -
               0.5 * (w * h * w - shw - shw.transpose());
    out.g_aa = -0.5 * e;
  }
  return out;
}

}  // namespace

bool StreamStep::nested() const {
  if (!prev) return true;
  for (Eigen::Index i = 0; i < prev->z.size(); ++i) {
    bool found = false;
    for (Eigen::Index j = 0; j < next.z.size() && !found; ++j) {
      found = prev->z.points.row(i) == next.z.points.row(j);
    }
    if (!found) return false;
  }
  return true;
}

StreamWorkspace make_workspace(const StreamStep& step) {
  check_step(step);
  if (!step.prev) {
    throw InvalidArgument("make_workspace: step has no previous posterior");
  }
  const auto& q = step.next;
  const auto& prev = *step.prev;
  const Cholesky kb = factor_gram(q.z.points, q.theta, q.jitter);
  const Eigen::MatrixXd k_ab = kernel_matrix(prev.z.points, q.z.points, q.theta);
  StreamWorkspace ws;
  ws.kappa = kb.solve(Eigen::MatrixXd(k_ab.transpose())).transpose();
  const Eigen::MatrixXd projected = ws.kappa * (kb.factored() - q.sigma) *
                                    ws.kappa.transpose();
  ws.ktilde_prev =
      symmetrize(jittered_gram(prev.z.points, q.theta, q.jitter) - projected);
  ws.lik_precision_prev = prev.lik_precision;
  return ws;
}

VariationalState stream_update(const std::optional<VariationalState>& prev,
                               const DatasetBatch& batch,
                               const InducingPointSet& z_t,
                               const KernelConfig& theta_t, double noise_var,
                               const JitterPolicy& jitter) {
  check_update_inputs(prev, batch, z_t, theta_t, noise_var, jitter);
  const double beta = 1.0 / noise_var;
  const Cholesky kb = factor_gram(z_t.points, theta_t, jitter);
  const Eigen::MatrixXd& k_b = kb.factored();
  const Eigen::Index mb = z_t.size();

  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(mb, mb);
  Eigen::VectorXd r = Eigen::VectorXd::Zero(mb);
  if (batch.x.rows() > 0) {
    const Eigen::MatrixXd k_bx = kernel_matrix(z_t.points, batch.x, theta_t);
    g.noalias() += beta * k_bx * k_bx.transpose();
    r.noalias() += beta * k_bx * batch.y;
  }
  if (prev) {
    const Eigen::MatrixXd k_ab = kernel_matrix(prev->z.points, z_t.points, theta_t);
    g.noalias() += k_ab.transpose() * prev->lik_precision * k_ab;
    r.noalias() += k_ab.transpose() * prev->eta1;
  }
  g = symmetrize(g);

  const Cholesky cb(symmetrize(k_b + g), 0.0, jitter.max_attempts);
  const Eigen::MatrixXd t = cb.solve_lower(k_b);

  VariationalState s;
  s.z = z_t;
  s.theta = theta_t;
  s.noise_var = noise_var;
  s.jitter = jitter;
  s.sigma = symmetrize(t.transpose() * t);
  s.mu = k_b * cb.solve(r);
  s.eta1 = kb.solve(r);
  const Eigen::MatrixXd wg = kb.solve(g);
  s.lik_precision = symmetrize(kb.solve(Eigen::MatrixXd(wg.transpose())));
  s.eta2 = -0.5 * symmetrize(kb.inverse() + s.lik_precision);
  return s;
}

VariationalState stream_update_natural(const std::optional<VariationalState>& prev,
                                       const DatasetBatch& batch,
                                       const InducingPointSet& z_t,
                                       const KernelConfig& theta_t,
                                       double noise_var,
                                       const JitterPolicy& jitter) {
  check_update_inputs(prev, batch, z_t, theta_t, noise_var, jitter);
  const double beta = 1.0 / noise_var;
  const Cholesky kb = factor_gram(z_t.points, theta_t, jitter);
  Eigen::MatrixXd precision = kb.inverse();
  Eigen::VectorXd eta1 = Eigen::VectorXd::Zero(z_t.size());
  if (batch.x.rows() > 0) {
    const Eigen::MatrixXd kappa_t =
        kb.solve(kernel_matrix(z_t.points, batch.x, theta_t));  // kappa_Xb^T
    precision += beta * kappa_t * kappa_t.transpose();
    eta1 += beta * kappa_t * batch.y;
  }
  if (prev) {
    const Eigen::MatrixXd kappa_ab_t =
        kb.solve(kernel_matrix(z_t.points, prev->z.points, theta_t));
    precision += kappa_ab_t * prev->lik_precision * kappa_ab_t.transpose();
    eta1 += kappa_ab_t * prev->eta1;
  }
  return state_from_natural(z_t, theta_t, noise_var, std::move(eta1),
                            -0.5 * symmetrize(precision), jitter);
}

OnlineElboTerms online_elbo_terms(const StreamStep& step) {
  check_step(step);
  OnlineElboTerms terms;
  terms.neg_kl_prior = -kl_to_prior(step.next);
  if (step.batch.x.rows() > 0) {
    terms.expected_ll = expected_log_likelihood(step.batch.x, step.batch.y, step.next);
  }
  if (!step.prev) return terms;

  const auto& prev = *step.prev;
  const StreamWorkspace ws = make_workspace(step);
  const Eigen::VectorXd c = ws.kappa * step.next.mu;
  const double ma = static_cast<double>(prev.size());
  const Cholesky kt(ws.ktilde_prev, 0.0, step.next.jitter.max_attempts);
  const Cholesky kp(prev.prior_cov());
  const Cholesky sa(prev.sigma);

  terms.kl_old_prior = 0.5 * (kp.solve(ws.ktilde_prev).trace() +
                              c.dot(kp.solve(c)) - ma + kp.log_det() -
                              kt.log_det());
  const Eigen::VectorXd d = prev.mu - c;
  terms.kl_old_posterior = 0.5 * (sa.solve(ws.ktilde_prev).trace() +
                                  d.dot(sa.solve(d)) - ma + sa.log_det() -
                                  kt.log_det());
  return terms;
}

double kl_correction(const StreamStep& step) {
  check_step(step);
  if (!step.prev) return 0.0;
  const auto& prev = *step.prev;
  const StreamWorkspace ws = make_workspace(step);
  const Eigen::MatrixXd& e = ws.lik_precision_prev;
  const Eigen::VectorXd c = ws.kappa * step.next.mu;
  const double log_det_prior = Cholesky(prev.prior_cov()).log_det();
  const double log_det_sigma = Cholesky(prev.sigma).log_det();
  return 0.5 * (log_det_prior - log_det_sigma - trace_product(e, ws.ktilde_prev) -
                prev.mu.dot(prev.eta1) + 2.0 * prev.eta1.dot(c) - c.dot(e * c));
}

double online_elbo(const StreamStep& step) {
  double value = -kl_to_prior(step.next) + kl_correction(step);
  if (step.batch.x.rows() > 0) {
    value += expected_log_likelihood(step.batch.x, step.batch.y, step.next);
  }
  return value;
}

Eigen::MatrixXd elbo_grad_Z(const StreamStep& step) {
  const ElboSensitivities g = sensitivities(step);
  const auto& zb = step.next.z.points;
  const double scale = -2.0 / (step.next.theta.lengthscale * step.next.theta.lengthscale);
  const Eigen::Index mb = zb.rows();
  Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(mb, zb.cols());
  for (Eigen::Index j = 0; j < mb; ++j) {
    for (Eigen::Index i = 0; i < mb; ++i) {
      if (i == j) continue;
      const double w = (g.g_b(i, j) + g.g_b(j, i)) * g.k_b(i, j) * scale;
      grad.row(j) += w * (zb.row(j) - zb.row(i));
    }
    for (Eigen::Index n = 0; n < g.k_xb.rows(); ++n) {
      const double w = g.g_xb(n, j) * g.k_xb(n, j) * scale;
      grad.row(j) += w * (zb.row(j) - step.batch.x.row(n));
    }
    if (step.prev) {
      const auto& za = step.prev->z.points;
      for (Eigen::Index i = 0; i < za.rows(); ++i) {
        const double w = g.g_ab(i, j) * g.k_ab(i, j) * scale;
        grad.row(j) += w * (zb.row(j) - za.row(i));
      }
    }
  }
  return grad;
}

double hyper_grad(const StreamStep& step, KernelParam wrt) {
  const ElboSensitivities g = sensitivities(step);
  const auto& q = step.next;
  const auto& zb = q.z.points;
  const double v = q.theta.variance;
  double total = 0.0;
  if (wrt == KernelParam::variance) {
    // Every matrix, jitter included, is linear in v.
    total += g.g_b.cwiseProduct(g.k_b_jittered).sum() / v;
    total += g.g_xb.cwiseProduct(g.k_xb).sum() / v;
    total += g.g_diag * static_cast<double>(step.batch.x.rows());
    if (step.prev) {
      total += g.g_ab.cwiseProduct(g.k_ab).sum() / v;
      total += g.g_aa.cwiseProduct(g.k_aa_jittered).sum() / v;
    }
    return total;
  }
  total += g.g_b.cwiseProduct(kernel_matrix_grad(zb, zb, q.theta, wrt)).sum();
  if (step.batch.x.rows() > 0) {
    total += g.g_xb.cwiseProduct(kernel_matrix_grad(step.batch.x, zb, q.theta, wrt))
                 .sum();
  }
  if (step.prev) {
    const auto& za = step.prev->z.points;
    total += g.g_ab.cwiseProduct(kernel_matrix_grad(za, zb, q.theta, wrt)).sum();
    total += g.g_aa.cwiseProduct(kernel_matrix_grad(za, za, q.theta, wrt)).sum();
  }
  return total;
}

Eigen::MatrixXd adam_step(const Eigen::MatrixXd& z, const Eigen::MatrixXd& grad,
                          AdamState& state, const AdamParams& params) {
  if (z.rows() != grad.rows() || z.cols() != grad.cols()) {
    throw InvalidArgument("adam_step: gradient shape does not match Z");
  }
  if (state.t == 0 || state.m.rows() != z.rows() || state.m.cols() != z.cols()) {
    if (state.t != 0) {
      throw InvalidArgument("adam_step: optimizer state shape does not match Z");
    }
    state.m = Eigen::MatrixXd::Zero(z.rows(), z.cols());
    state.v = Eigen::MatrixXd::Zero(z.rows(), z.cols());
  }
  state.t += 1;
  state.m = params.beta1 * state.m + (1.0 - params.beta1) * grad;
  state.v = params.beta2 * state.v + (1.0 - params.beta2) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(params.beta1, state.t);
  const double c2 = 1.0 - std::pow(params.beta2, state.t);
  const Eigen::ArrayXXd mhat = state.m.array() / c1;
  const Eigen::ArrayXXd vhat = state.v.array() / c2;
  return z.array() + params.alpha * mhat / (vhat.sqrt() + params.eps);
}

VariationalState svi_update(const VariationalState& state, const DatasetBatch& batch,
                            const InducingPointSet& z, std::size_t n_total,
                            double lr) {
  if (z.points.rows() != state.z.points.rows() ||
      z.points.cols() != state.z.points.cols() || z.points != state.z.points) {
    throw InvalidArgument("svi_update: inducing locations changed between calls");
  }
  if (batch.x.rows() == 0 || batch.x.rows() != batch.y.size()) {
    throw InvalidArgument("svi_update: batch must be non-empty with matching y");
  }
  if (batch.x.cols() != z.dim()) {
    throw InvalidArgument("svi_update: batch dimension does not match Z");
  }
  if (!(lr >= 0.0 && lr <= 1.0)) {
    throw InvalidArgument("svi_update: learning rate must lie in [0, 1]");
  }
  if (n_total < static_cast<std::size_t>(batch.x.rows())) {
    throw InvalidArgument("svi_update: N_total is smaller than the batch");
  }
  if (lr == 0.0) return state;
  const double beta = 1.0 / state.noise_var;
  const double scale = static_cast<double>(n_total) / static_cast<double>(batch.x.rows());
  const Cholesky kz(jittered_gram(z.points, state.theta, state.jitter), 0.0,
                    state.jitter.max_attempts);
  const Eigen::MatrixXd kappa_t = kz.solve(kernel_matrix(z.points, batch.x, state.theta));
  const Eigen::VectorXd target1 = scale * beta * (kappa_t * batch.y);
  const Eigen::MatrixXd target2 =
      -0.5 * symmetrize(kz.inverse() + scale * beta * kappa_t * kappa_t.transpose());
  Eigen::VectorXd eta1 = state.eta1 + lr * (target1 - state.eta1);
  Eigen::MatrixXd eta2 = state.eta2 + lr * (target2 - state.eta2);
  return state_from_natural(state.z, state.theta, state.noise_var, std::move(eta1),
                            std::move(eta2), state.jitter);
}

StreamMethod parse_stream_method(const std::string& s) {
  if (s == "oips") return StreamMethod::oips;
  if (s == "oips-opt") return StreamMethod::oips_opt;
  if (s == "kmeans-opt") return StreamMethod::kmeans_opt;
  if (s == "grid") return StreamMethod::grid;
  throw InvalidArgument("unknown method '" + s +
                        "' (expected oips, oips-opt, kmeans-opt or grid)");
}

const char* to_string(StreamMethod m) {
  switch (m) {
    case StreamMethod::oips:
      return "oips";
    case StreamMethod::oips_opt:
      return "oips-opt";
    case StreamMethod::kmeans_opt:
      return "kmeans-opt";
    case StreamMethod::grid:
      return "grid";
  }
  return "?";
}

StreamResult run_stream(const StreamingDataset& data, const StreamConfig& cfg) {
  cfg.theta.validate();
  cfg.jitter.validate();
  if (data.batches.empty()) {
    throw InvalidArgument("run_stream: dataset has no batches");
  }
  if (data.x_test.rows() == 0) {
    throw InvalidArgument("run_stream: test set is empty");
  }
  if (data.x_test.cols() != data.x_train.cols()) {
    throw InvalidArgument("run_stream: train and test dimensions differ");
  }
  if (cfg.opt_steps < 0) {
    throw InvalidArgument("run_stream: opt_steps must be non-negative");
  }
  const bool optimize =
      cfg.method == StreamMethod::oips_opt || cfg.method == StreamMethod::kmeans_opt;

  StreamResult result;
  std::optional<VariationalState> prev;
  InducingPointSet z;
  GridSpec grid;
  std::size_t n_seen = 0;
  for (std::size_t t = 0; t < data.n_batches(); ++t) {
    const auto start = std::chrono::steady_clock::now();
    const DatasetBatch batch = data.batch(t);
    VariationalState state;
    try {
      switch (cfg.method) {
        case StreamMethod::oips:
        case StreamMethod::oips_opt:
          if (t == 0) z = InducingPointSet::empty_oips(cfg.rho, data.x_train.cols());
          z = oips_batch(z, batch.x, cfg.theta, data.batches[t].begin);
          break;
        case StreamMethod::kmeans_opt:
          if (t == 0) z = kmeans_select(batch.x, cfg.n_inducing, cfg.kmeans_iters, cfg.seed);
          break;
        case StreamMethod::grid:
          grid = t == 0 ? GridSpec::bounding(batch.x, cfg.points_per_dim)
                        : grid_adapt(grid, batch.x);
          z = grid_select(grid);
          break;
      }
      state = stream_update(prev, batch, z, cfg.theta, cfg.noise_var, cfg.jitter);
      if (optimize && cfg.opt_steps > 0) {
        AdamState adam;
        for (int s = 0; s < cfg.opt_steps; ++s) {
          const Eigen::MatrixXd grad = elbo_grad_Z(StreamStep{prev, state, batch});
          z.points = adam_step(z.points, grad, adam, cfg.adam);
          z.separated = false;
          state = stream_update(prev, batch, z, cfg.theta, cfg.noise_var, cfg.jitter);
        }
      }
    } catch (const NumericalError& e) {
      throw NumericalError("batch " + std::to_string(t) + ": " + e.what());
    }
    n_seen += batch.x.rows();

    BatchMetrics row;
    row.batch_index = t;
    row.n_seen = n_seen;
    row.m = state.size();
    row.elbo = online_elbo(StreamStep{prev, state, batch});
    const Prediction pred = predict(data.x_test, state);
    row.test_nll = mean_test_nll(pred, data.y_test);
    row.test_rmse = rmse(pred, data.y_test);
    row.clamped = pred.clamped;
    row.elapsed_ms = std::chrono::duration<double, std::milli>(
                         std::chrono::steady_clock::now() - start)
                         .count();
    result.metrics.push_back(row);
    prev = std::move(state);
  }
  result.final_state = std::move(*prev);
  return result;
}

void write_metrics_csv(const std::filesystem::path& path,
                       const std::vector<BatchMetrics>& metrics, bool timing) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw std::runtime_error("cannot write " + path.string());
  }
  out << "batch_index,n_seen,M,elbo,test_nll,test_rmse,elapsed_ms\n";
  for (const auto& r : metrics) {
    out << r.batch_index << ',' << r.n_seen << ',' << r.m << ','
        << format_double(r.elbo) << ',' << format_double(r.test_nll) << ','
        << format_double(r.test_rmse) << ','
        << (timing ? format_double(r.elapsed_ms) : std::string("NA")) << '\n';
  }
  if (!out) {
    throw std::runtime_error("failed writing " + path.string());
  }
}

}  // namespace streamgp
