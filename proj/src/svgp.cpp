#include "streamgp/svgp.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "streamgp/errors.hpp"

namespace streamgp {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

void check_data(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                Eigen::Index dim, const char* where) {
  if (x.rows() == 0) {
    throw InvalidArgument(std::string(where) + ": no data points");
  }
  if (x.rows() != y.size()) {
    throw InvalidArgument(std::string(where) + ": X has " +
                          std::to_string(x.rows()) + " rows but y has " +
                          std::to_string(y.size()) + " entries");
  }
  if (x.cols() != dim) {
    throw InvalidArgument(std::string(where) + ": input dimension " +
                          std::to_string(x.cols()) + " does not match Z (" +
                          std::to_string(dim) + ")");
  }
}

void check_inducing(const InducingPointSet& z, const char* where) {
  if (z.empty()) {
    throw InvalidArgument(std::string(where) + ": empty inducing set");
  }
}

void check_noise(double noise_var) {
  if (!(noise_var > 0.0) || !std::isfinite(noise_var)) {
    throw InvalidArgument("noise variance must be positive");
  }
}

Cholesky factor_prior(const InducingPointSet& z, const KernelConfig& theta,
                      const JitterPolicy& jitter) {
  theta.validate();
  jitter.validate();
  return Cholesky(jittered_gram(z.points, theta, jitter), 0.0,
                  jitter.max_attempts);
}

void check_state(const VariationalState& s) {
  const Eigen::Index m = s.z.size();
  if (m == 0 || s.mu.size() != m || s.sigma.rows() != m || s.sigma.cols() != m) {
    throw InvalidArgument("variational state dimensions are inconsistent");
  }
}

}  // namespace

Eigen::MatrixXd VariationalState::prior_cov() const {
  return factor_prior(z, theta, jitter).factored();
}

VariationalState prior_state(const InducingPointSet& z, const KernelConfig& theta,
                             double noise_var, const JitterPolicy& jitter) {
  check_inducing(z, "prior_state");
  check_noise(noise_var);
  const Cholesky kz = factor_prior(z, theta, jitter);
  const Eigen::Index m = z.size();
  VariationalState s;
  s.z = z;
  s.theta = theta;
  s.noise_var = noise_var;
  s.jitter = jitter;
  s.mu = Eigen::VectorXd::Zero(m);
  s.sigma = kz.factored();
  s.eta1 = Eigen::VectorXd::Zero(m);
  s.eta2 = -0.5 * kz.inverse();
  s.lik_precision = Eigen::MatrixXd::Zero(m, m);
  return s;
}

VariationalState state_from_moments(const InducingPointSet& z,
                                    const KernelConfig& theta, double noise_var,
                                    Eigen::VectorXd mu, Eigen::MatrixXd sigma,
                                    const JitterPolicy& jitter) {
  check_inducing(z, "state_from_moments");
  check_noise(noise_var);
  const Eigen::Index m = z.size();
  if (mu.size() != m || sigma.rows() != m || sigma.cols() != m) {
    throw InvalidArgument("state_from_moments: mu/Sigma do not match |Z|");
  }
  const Cholesky kz = factor_prior(z, theta, jitter);
  sigma = symmetrize(sigma);
  Cholesky cs;
  try {
    cs = Cholesky(sigma);
  } catch (const NumericalError&) {
    throw NumericalError("state_from_moments: Sigma is not positive definite");
  }
  const Eigen::MatrixXd precision = cs.inverse();
  VariationalState s;
  s.z = z;
  s.theta = theta;
  s.noise_var = noise_var;
  s.jitter = jitter;
  s.eta1 = cs.solve(mu);
  s.eta2 = -0.5 * precision;
  s.lik_precision = symmetrize(precision - kz.inverse());
  s.mu = std::move(mu);
  s.sigma = std::move(sigma);
  return s;
}

VariationalState state_from_natural(const InducingPointSet& z,
                                    const KernelConfig& theta, double noise_var,
                                    Eigen::VectorXd eta1, Eigen::MatrixXd eta2,
                                    const JitterPolicy& jitter) {
  check_inducing(z, "state_from_natural");
  check_noise(noise_var);
  const Eigen::Index m = z.size();
  if (eta1.size() != m || eta2.rows() != m || eta2.cols() != m) {
    throw InvalidArgument("state_from_natural: eta1/eta2 do not match |Z|");
  }
  const Cholesky kz = factor_prior(z, theta, jitter);
  eta2 = symmetrize(eta2);
  const Eigen::MatrixXd precision = -2.0 * eta2;
  Cholesky cp;
  try {
    cp = Cholesky(precision);
  } catch (const NumericalError&) {
    throw NumericalError("state_from_natural: eta2 is not negative definite");
  }
  VariationalState s;
  s.z = z;
  s.theta = theta;
  s.noise_var = noise_var;
  s.jitter = jitter;
  s.sigma = cp.inverse();
  s.mu = cp.solve(eta1);
  s.lik_precision = symmetrize(precision - kz.inverse());
  s.eta1 = std::move(eta1);
  s.eta2 = std::move(eta2);
  return s;
}

VariationalState optimal_variational(const Eigen::MatrixXd& x,
                                     const Eigen::VectorXd& y,
                                     const InducingPointSet& z,
                                     const KernelConfig& theta, double noise_var,
                                     const JitterPolicy& jitter) {
  check_inducing(z, "optimal_variational");
  check_data(x, y, z.dim(), "optimal_variational");
  check_noise(noise_var);
  const Cholesky kz = factor_prior(z, theta, jitter);
  const Eigen::MatrixXd& k_zz = kz.factored();
  const Eigen::MatrixXd k_zx = kernel_matrix(z.points, x, theta);
  const double beta = 1.0 / noise_var;

  // Sigma* = K_Z A^{-1} K_Z with A = K_Z + beta K_ZX K_XZ.
  const Eigen::MatrixXd a = symmetrize(k_zz + beta * k_zx * k_zx.transpose());
  const Cholesky ca(a, 0.0, jitter.max_attempts);
  const Eigen::MatrixXd t = ca.solve_lower(k_zz);
  const Eigen::VectorXd rhs = beta * (k_zx * y);

  VariationalState s;
  s.z = z;
  s.theta = theta;
  s.noise_var = noise_var;
  s.jitter = jitter;
  s.sigma = symmetrize(t.transpose() * t);
  s.mu = k_zz * ca.solve(rhs);
  s.eta1 = kz.solve(rhs);
  const Eigen::MatrixXd v = kz.solve(k_zx);
  s.lik_precision = symmetrize(beta * v * v.transpose());
  s.eta2 = -0.5 * symmetrize(kz.inverse() + s.lik_precision);
  return s;
}

double kl_to_prior(const VariationalState& state) {
  check_state(state);
  const Cholesky kz = factor_prior(state.z, state.theta, state.jitter);
  const Cholesky cs(state.sigma);
  const double m = static_cast<double>(state.size());
  const double trace = kz.solve(state.sigma).trace();
  const double quad = state.mu.dot(kz.solve(state.mu));
  return 0.5 * (kz.log_det() - cs.log_det() - m + trace + quad);
}

double expected_log_likelihood(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                               const VariationalState& state) {
  check_state(state);
  check_data(x, y, state.z.dim(), "expected_log_likelihood");
  const Cholesky kz = factor_prior(state.z, state.theta, state.jitter);
  const Eigen::MatrixXd k_zx = kernel_matrix(state.z.points, x, state.theta);
  const Eigen::MatrixXd v = kz.solve(k_zx);  // kappa^T
  const Eigen::VectorXd resid = y - v.transpose() * state.mu;
  const double nystrom_trace =
      static_cast<double>(x.rows()) * state.theta.variance -
      k_zx.cwiseProduct(v).sum();
  const double q_trace = v.cwiseProduct(state.sigma * v).sum();
  const double n = static_cast<double>(x.rows());
  return -0.5 * n * (kLog2Pi + std::log(state.noise_var)) -
         0.5 / state.noise_var * (resid.squaredNorm() + nystrom_trace + q_trace);
}

double elbo(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
            const VariationalState& state) {
  return expected_log_likelihood(x, y, state) - kl_to_prior(state);
}

Prediction predict(const Eigen::MatrixXd& x_star, const VariationalState& state) {
  check_state(state);
  if (x_star.cols() != state.z.dim()) {
    throw InvalidArgument("predict: input dimension does not match Z");
  }
  const Cholesky kz = factor_prior(state.z, state.theta, state.jitter);
  const Eigen::MatrixXd k_zs = kernel_matrix(state.z.points, x_star, state.theta);
  const Eigen::MatrixXd v = kz.solve(k_zs);
  // var = k** - k*^T K_Z^{-1} (K_Z - Sigma) K_Z^{-1} k*, which is exactly k**
  // for the prior state.
  const Eigen::MatrixXd shrink = kz.factored() - state.sigma;
  const Eigen::MatrixXd sv = shrink * v;

  Prediction p;
  p.mean = v.transpose() * state.mu;
  p.latent_var.resize(x_star.rows());
  for (Eigen::Index i = 0; i < x_star.rows(); ++i) {
    double var = state.theta.variance - v.col(i).dot(sv.col(i));
    if (var < 0.0) {
      ++p.clamped;
      p.most_negative = std::min(p.most_negative, var);
      var = 0.0;
    }
    p.latent_var(i) = var;
  }
  p.suspicious = p.most_negative < -1e-6 * state.theta.variance;
  p.observed_var = p.latent_var.array() + state.noise_var;
  return p;
}

double mean_test_nll(const Prediction& pred, const Eigen::VectorXd& y) {
  if (y.size() != pred.mean.size() || y.size() == 0) {
    throw InvalidArgument("mean_test_nll: size mismatch");
  }
  double total = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const double s = pred.observed_var(i);
    const double r = y(i) - pred.mean(i);
    total += 0.5 * (kLog2Pi + std::log(s)) + 0.5 * r * r / s;
  }
  return total / static_cast<double>(y.size());
}

double rmse(const Prediction& pred, const Eigen::VectorXd& y) {
  if (y.size() != pred.mean.size() || y.size() == 0) {
    throw InvalidArgument("rmse: size mismatch");
  }
  return std::sqrt((y - pred.mean).squaredNorm() / static_cast<double>(y.size()));
}

double exact_gp_log_evidence(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                             const KernelConfig& theta, double noise_var) {
  theta.validate();
  check_noise(noise_var);
  check_data(x, y, x.cols(), "exact_gp_log_evidence");
  Eigen::MatrixXd k = kernel_matrix(x, theta);
  k.diagonal().array() += noise_var;
  const Cholesky c(k);
  const double n = static_cast<double>(x.rows());
  return -0.5 * y.dot(c.solve(y)) - 0.5 * c.log_det() - 0.5 * n * kLog2Pi;
}

Eigen::VectorXd exact_gp_posterior_mean(const Eigen::MatrixXd& x,
                                        const Eigen::VectorXd& y,
                                        const Eigen::MatrixXd& x_star,
                                        const KernelConfig& theta,
                                        double noise_var) {
  theta.validate();
  check_noise(noise_var);
  check_data(x, y, x.cols(), "exact_gp_posterior_mean");
  Eigen::MatrixXd k = kernel_matrix(x, theta);
  k.diagonal().array() += noise_var;
  const Cholesky c(k);
  return kernel_matrix(x_star, x, theta) * c.solve(y);
}

NystromResidual nystrom_residual(const Eigen::MatrixXd& x, const Eigen::MatrixXd& z,
                                 const KernelConfig& theta,
                                 const JitterPolicy& fallback) {
  theta.validate();
  if (z.rows() == 0) {
    throw InvalidArgument("nystrom_residual: empty inducing set");
  }
  if (x.rows() == 0) {
    throw InvalidArgument("nystrom_residual: no data points");
  }
  if (x.cols() != z.cols()) {
    throw InvalidArgument("nystrom_residual: dimension mismatch");
  }
  const Eigen::MatrixXd k_zz = kernel_matrix(z, theta);
  Cholesky kz;
  try {
    kz = Cholesky(k_zz);
  } catch (const NumericalError&) {
    kz = Cholesky(k_zz, fallback.absolute(theta), fallback.max_attempts);
  }
  const Eigen::MatrixXd t = kz.solve_lower(kernel_matrix(z, x, theta));
  const Eigen::MatrixXd schur = kernel_matrix(x, theta) - t.transpose() * t;
  NystromResidual r;
  r.frobenius = schur.norm();
  r.trace = std::max(0.0, schur.trace());
  return r;
}

namespace {

nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::MatrixXd matrix_from_json(const nlohmann::json& j, Eigen::Index cols_hint,
                                 const char* what) {
  if (!j.is_array()) {
    throw ParseError(std::string("state document: '") + what + "' must be an array");
  }
  const auto rows = static_cast<Eigen::Index>(j.size());
  const Eigen::Index cols = rows > 0 ? static_cast<Eigen::Index>(j[0].size()) : cols_hint;
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const auto& row = j[static_cast<std::size_t>(i)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) {
      throw ParseError(std::string("state document: ragged '") + what + "'");
    }
    for (Eigen::Index c = 0; c < cols; ++c) {
      m(i, c) = row[static_cast<std::size_t>(c)].get<double>();
    }
  }
  return m;
}

}  // namespace

nlohmann::json state_to_json(const VariationalState& state,
                             const std::optional<StreamCursor>& cursor) {
  nlohmann::json doc;
  doc["z"] = matrix_to_json(state.z.points);
  doc["z_meta"] = {{"rho", state.z.rho},
                   {"separated", state.z.separated},
                   {"creation_order", state.z.creation_order}};
  doc["theta"] = {{"lengthscale", state.theta.lengthscale},
                  {"variance", state.theta.variance}};
  doc["noise_var"] = state.noise_var;
  doc["jitter"] = {{"relative", state.jitter.relative},
                   {"max_attempts", state.jitter.max_attempts}};
  doc["mu"] = std::vector<double>(state.mu.data(), state.mu.data() + state.mu.size());
  doc["sigma"] = matrix_to_json(state.sigma);
  if (cursor) {
    doc["cursor"] = {{"batch_index", cursor->batch_index},
                     {"n_seen", cursor->n_seen}};
  }
  return doc;
}

VariationalState state_from_json(const nlohmann::json& doc,
                                 std::optional<StreamCursor>* cursor) {
  try {
    InducingPointSet z;
    z.points = matrix_from_json(doc.at("z"), 0, "z");
    if (doc.contains("z_meta")) {
      const auto& meta = doc.at("z_meta");
      z.rho = meta.value("rho", 0.0);
      z.separated = meta.value("separated", false);
      z.creation_order = meta.value("creation_order", std::vector<std::size_t>{});
    }
    if (z.creation_order.size() != static_cast<std::size_t>(z.size())) {
      z.creation_order.resize(static_cast<std::size_t>(z.size()));
      for (std::size_t i = 0; i < z.creation_order.size(); ++i) z.creation_order[i] = i;
    }
    KernelConfig theta{doc.at("theta").at("lengthscale").get<double>(),
                       doc.at("theta").at("variance").get<double>()};
    JitterPolicy jitter;
    if (doc.contains("jitter")) {
      jitter.relative = doc["jitter"].value("relative", jitter.relative);
      jitter.max_attempts = doc["jitter"].value("max_attempts", jitter.max_attempts);
    }
    const auto mu_vec = doc.at("mu").get<std::vector<double>>();
    Eigen::VectorXd mu = Eigen::Map<const Eigen::VectorXd>(
        mu_vec.data(), static_cast<Eigen::Index>(mu_vec.size()));
    Eigen::MatrixXd sigma = matrix_from_json(doc.at("sigma"), mu.size(), "sigma");
    if (cursor != nullptr) {
      if (doc.contains("cursor")) {
        StreamCursor c;
        c.batch_index = doc["cursor"].at("batch_index").get<std::size_t>();
        c.n_seen = doc["cursor"].at("n_seen").get<std::size_t>();
        *cursor = c;
      } else {
        cursor->reset();
      }
    }
    return state_from_moments(z, theta, doc.at("noise_var").get<double>(),
                              std::move(mu), std::move(sigma), jitter);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("state document: ") + e.what());
  }
}

}  // namespace streamgp
