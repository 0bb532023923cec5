#include "streamgp/bounds.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "streamgp/errors.hpp"
#include "streamgp/svgp.hpp"

namespace streamgp {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double hi = std::max(a, b);
  return hi + std::log1p(std::exp(std::min(a, b) - hi));
}

void check_rho(double rho) {
  if (!(rho > 0.0 && rho < 1.0)) {
    throw InvalidArgument("rho must lie in (0, 1)");
  }
}

void check_nonnegative(const Eigen::VectorXd& lambda) {
  for (Eigen::Index i = 0; i < lambda.size(); ++i) {
    if (!(lambda(i) >= 0.0) || !std::isfinite(lambda(i))) {
      throw InvalidArgument("elementary_symmetric: eigenvalues must be finite and >= 0");
    }
  }
}

/// table(l, n) = log e_l(lambda_0..lambda_{n-1}) for l <= k, n <= N.
Eigen::MatrixXd log_esp_table(const Eigen::VectorXd& lambda, std::size_t k) {
  const auto n = lambda.size();
  const auto kk = static_cast<Eigen::Index>(k);
  Eigen::MatrixXd t = Eigen::MatrixXd::Constant(kk + 1, n + 1, kNegInf);
  t.row(0).setZero();
  for (Eigen::Index j = 1; j <= n; ++j) {
    const double log_lambda = lambda(j - 1) > 0.0 ? std::log(lambda(j - 1)) : kNegInf;
    for (Eigen::Index l = 1; l <= std::min(kk, j); ++l) {
      const double take = log_lambda == kNegInf ? kNegInf : log_lambda + t(l - 1, j - 1);
      t(l, j) = log_add(t(l, j - 1), take);
    }
  }
  return t;
}

void check_square(const Eigen::MatrixXd& k, const char* where) {
  if (k.rows() != k.cols() || k.rows() == 0) {
    throw InvalidArgument(std::string(where) + ": kernel matrix must be square and non-empty");
  }
}

nlohmann::json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

std::optional<double> optional_from(const nlohmann::json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

std::string violation_message(const BoundReport& r) {
  std::ostringstream s;
  s.precision(17);
  s << "bound violated: empirical residual " << r.empirical_frobenius
    << " exceeds bound " << r.theorem2 << " (N = " << r.n << ", M = " << r.m
    << ", rho = " << r.rho << "); eigenvalue-tail bound "
    << (r.burt ? std::to_string(*r.burt) : std::string("n/a"));
  return s.str();
}

}  // namespace

void BoundParams::validate() const {
  check_rho(rho);
  if (dim < 1) throw InvalidArgument("bound parameters: D must be >= 1");
  if (!(side > 0.0) || !std::isfinite(side)) {
    throw InvalidArgument("bound parameters: side length must be positive");
  }
  if (!(lengthscale > 0.0) || !std::isfinite(lengthscale)) {
    throw InvalidArgument("bound parameters: lengthscale must be positive");
  }
}

double BoundParams::alpha() const {
  validate();
  const double d = static_cast<double>(dim);
  return std::pow(lengthscale * std::sqrt(-d * std::log(rho)) / 2.0, d);
}

double BoundParams::volume() const {
  validate();
  return std::pow(side, static_cast<double>(dim));
}

double theorem1_bound(const BoundParams& p) {
  const double alpha = p.alpha();
  const double vol = p.volume();
  if (alpha >= vol) {
    std::ostringstream s;
    s << "count bound is degenerate: alpha = " << alpha << " >= a^D = " << vol;
    throw DegenerateBound(s.str());
  }
  const double n1 = static_cast<double>(p.n) + 1.0;
  if (vol == 1.0) {
    // 1 - (1 - alpha)^{N+1} without cancellation.
    return -std::expm1(n1 * std::log1p(-alpha)) / alpha;
  }
  return (vol - std::pow(vol - alpha, n1)) / alpha;
}

double theorem1_limit(const BoundParams& p) {
  const double alpha = p.alpha();
  const double vol = p.volume();
  if (alpha >= vol) {
    throw DegenerateBound("count bound is degenerate: alpha >= a^D");
  }
  return vol / alpha;
}

double markov_chain_expectation(const BoundParams& p) {
  const double ratio = p.alpha() / p.volume();
  const std::size_t n = p.n;
  // dist[k] = P(K = k + 1).
  std::vector<double> dist(n + 1, 0.0), next(n + 1, 0.0);
  dist[0] = 1.0;
  std::size_t top = 0;
  for (std::size_t step = 0; step < n; ++step) {
    std::fill(next.begin(), next.begin() + static_cast<std::ptrdiff_t>(top + 2), 0.0);
    for (std::size_t k = 0; k <= top; ++k) {
      const double birth = std::max(1.0 - static_cast<double>(k + 1) * ratio, 0.0);
      next[k + 1] += dist[k] * birth;
      next[k] += dist[k] * (1.0 - birth);
    }
    if (next[top + 1] > 0.0) ++top;
    std::swap(dist, next);
  }
  double e = 0.0;
  for (std::size_t k = 0; k <= top; ++k) e += static_cast<double>(k + 1) * dist[k];
  return e;
}

double theorem2_bound(std::size_t n, std::size_t m, double rho) {
  check_rho(rho);
  if (m < 1 || m > n) {
    throw InvalidArgument("theorem2_bound: need 1 <= M <= N");
  }
  const double md = static_cast<double>(m);
  return static_cast<double>(n - m) * (1.0 - rho * rho / (1.0 + md * (md - 1.0) * rho));
}

SpectrumCache SpectrumCache::of(const Eigen::MatrixXd& k) {
  check_square(k, "SpectrumCache");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(k, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) {
    throw NumericalError("SpectrumCache: eigendecomposition failed");
  }
  const Eigen::VectorXd asc = es.eigenvalues();
  SpectrumCache s;
  s.min_raw = asc(0);
  const double tol = 1e-10 * std::max(1.0, asc(asc.size() - 1));
  if (s.min_raw < -tol) {
    throw InvalidArgument("SpectrumCache: matrix is not positive semi-definite (eigenvalue " +
                          std::to_string(s.min_raw) + ")");
  }
  s.eigenvalues = asc.reverse().cwiseMax(0.0);
  return s;
}

double burt_bound(const SpectrumCache& spec, std::size_t m) {
  if (m >= spec.size()) {
    throw InvalidArgument("burt_bound: need M < N");
  }
  const auto tail = spec.eigenvalues.tail(static_cast<Eigen::Index>(spec.size() - m));
  return static_cast<double>(m + 1) * tail.sum();
}

double log_elementary_symmetric(const Eigen::VectorXd& lambda, std::size_t k) {
  if (k > static_cast<std::size_t>(lambda.size())) {
    throw InvalidArgument("elementary_symmetric: k exceeds the number of values");
  }
  check_nonnegative(lambda);
  const Eigen::MatrixXd t = log_esp_table(lambda, k);
  return t(static_cast<Eigen::Index>(k), lambda.size());
}

double elementary_symmetric(const Eigen::VectorXd& lambda, std::size_t k) {
  return std::exp(log_elementary_symmetric(lambda, k));
}

double kdpp_log_prob(const Eigen::MatrixXd& k, const std::vector<Eigen::Index>& subset) {
  return kdpp_log_prob(k, subset, SpectrumCache::of(k));
}

double kdpp_log_prob(const Eigen::MatrixXd& k, const std::vector<Eigen::Index>& subset,
                     const SpectrumCache& spec) {
  check_square(k, "kdpp_log_prob");
  if (spec.size() != static_cast<std::size_t>(k.rows())) {
    throw InvalidArgument("kdpp_log_prob: spectrum does not match the kernel matrix");
  }
  const auto n = k.rows();
  for (auto i : subset) {
    if (i < 0 || i >= n) {
      throw InvalidArgument("kdpp_log_prob: subset index out of range");
    }
  }
  const double log_norm = log_elementary_symmetric(spec.eigenvalues, subset.size());
  if (log_norm == kNegInf) {
    throw NumericalError("kdpp_log_prob: subset size exceeds the rank of K");
  }
  if (subset.empty()) return -log_norm;
  // det(K_S) does not depend on the order of S; sorting makes the rounding
  // independent of it too.
  std::vector<Eigen::Index> sorted = subset;
  std::sort(sorted.begin(), sorted.end());
  const auto m = static_cast<Eigen::Index>(sorted.size());
  Eigen::MatrixXd ks(m, m);
  for (Eigen::Index a = 0; a < m; ++a) {
    for (Eigen::Index b = 0; b < m; ++b) {
      ks(a, b) = k(sorted[static_cast<std::size_t>(a)], sorted[static_cast<std::size_t>(b)]);
    }
  }
  Eigen::LLT<Eigen::MatrixXd> llt(ks);
  if (llt.info() != Eigen::Success) return kNegInf;
  const Eigen::VectorXd pivots = llt.matrixLLT().diagonal();
  const double floor = 1e-14 * ks.diagonal().cwiseAbs().maxCoeff();
  if (pivots.cwiseAbs2().minCoeff() <= floor) return kNegInf;
  return 2.0 * pivots.array().log().sum() - log_norm;
}

KdppSampler::KdppSampler(const Eigen::MatrixXd& k) {
  check_square(k, "KdppSampler");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(k);
  if (es.info() != Eigen::Success) {
    throw NumericalError("KdppSampler: eigendecomposition failed");
  }
  values_ = es.eigenvalues().cwiseMax(0.0);
  vectors_ = es.eigenvectors();
  const double top = values_.maxCoeff();
  for (Eigen::Index i = 0; i < values_.size(); ++i) {
    if (values_(i) > 1e-12 * top) ++rank_;
  }
}

std::vector<Eigen::Index> KdppSampler::sample(std::size_t k, std::mt19937_64& rng) const {
  if (k > rank_) {
    throw InvalidArgument("kdpp_sample: k = " + std::to_string(k) +
                          " exceeds the numerical rank " + std::to_string(rank_));
  }
  const Eigen::Index n = values_.size();
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  // Eigenvector selection.
  const Eigen::MatrixXd t = log_esp_table(values_, k);
  std::vector<Eigen::Index> chosen;
  auto l = static_cast<Eigen::Index>(k);
  for (Eigen::Index j = n; j >= 1 && l > 0; --j) {
    if (j == l) {
      chosen.push_back(j - 1);
      --l;
      continue;
    }
    const double lam = values_(j - 1);
    if (lam <= 0.0) continue;
    const double log_p = std::log(lam) + t(l - 1, j - 1) - t(l, j);
    if (unif(rng) < std::exp(log_p)) {
      chosen.push_back(j - 1);
      --l;
    }
  }

  Eigen::MatrixXd v(n, static_cast<Eigen::Index>(chosen.size()));
  for (std::size_t c = 0; c < chosen.size(); ++c) {
    v.col(static_cast<Eigen::Index>(c)) = vectors_.col(chosen[c]);
  }

  // Sequential sampling from the projection DPP spanned by v.
  std::vector<Eigen::Index> out;
  while (v.cols() > 0) {
    const Eigen::VectorXd weight = v.rowwise().squaredNorm();
    double target = unif(rng) * weight.sum();
    Eigen::Index pick = n - 1;
    for (Eigen::Index i = 0; i < n; ++i) {
      target -= weight(i);
      if (target < 0.0) {
        pick = i;
        break;
      }
    }
    while (weight(pick) == 0.0 && pick > 0) --pick;
    out.push_back(pick);

    Eigen::Index col = 0;
    v.row(pick).cwiseAbs().maxCoeff(&col);
    const Eigen::VectorXd pivot = v.col(col) / v(pick, col);
    Eigen::MatrixXd rest(n, v.cols() - 1);
    for (Eigen::Index c = 0, o = 0; c < v.cols(); ++c) {
      if (c == col) continue;
      rest.col(o++) = v.col(c) - pivot * v(pick, c);
    }
    // Modified Gram-Schmidt keeps the remaining basis orthonormal.
    for (Eigen::Index c = 0; c < rest.cols(); ++c) {
      for (Eigen::Index p = 0; p < c; ++p) {
        rest.col(c) -= rest.col(p).dot(rest.col(c)) * rest.col(p);
      }
      const double nrm = rest.col(c).norm();
      if (nrm > 0.0) rest.col(c) /= nrm;
    }
    v = std::move(rest);
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<Eigen::Index> kdpp_sample(const Eigen::MatrixXd& k, std::size_t size,
                                      std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return KdppSampler(k).sample(size, rng);
}

nlohmann::json BoundReport::to_json() const {
  return {{"n", n},
          {"m", m},
          {"dim", dim},
          {"side", side},
          {"lengthscale", lengthscale},
          {"rho", rho},
          {"alpha", alpha},
          {"alpha_ratio", alpha_ratio},
          {"lambda_max_kz", lambda_max_kz},
          {"eigenvalues", eigenvalues},
          {"empirical_frobenius", empirical_frobenius},
          {"empirical_trace", empirical_trace},
          {"theorem1", optional_json(theorem1)},
          {"theorem1_limit", theorem1_limit},
          {"theorem2", theorem2},
          {"burt", optional_json(burt)},
          {"tolerance", tolerance},
          {"holds", holds}};
}

BoundReport BoundReport::from_json(const nlohmann::json& j) {
  try {
    BoundReport r;
    r.n = j.at("n").get<std::size_t>();
    r.m = j.at("m").get<std::size_t>();
    r.dim = j.at("dim").get<Eigen::Index>();
    r.side = j.at("side").get<double>();
    r.lengthscale = j.at("lengthscale").get<double>();
    r.rho = j.at("rho").get<double>();
    r.alpha = j.at("alpha").get<double>();
    r.alpha_ratio = j.at("alpha_ratio").get<double>();
    r.lambda_max_kz = j.at("lambda_max_kz").get<double>();
    r.eigenvalues = j.at("eigenvalues").get<std::vector<double>>();
    r.empirical_frobenius = j.at("empirical_frobenius").get<double>();
    r.empirical_trace = j.at("empirical_trace").get<double>();
    r.theorem1 = optional_from(j.at("theorem1"));
    r.theorem1_limit = j.at("theorem1_limit").get<double>();
    r.theorem2 = j.at("theorem2").get<double>();
    r.burt = optional_from(j.at("burt"));
    r.tolerance = j.at("tolerance").get<double>();
    r.holds = j.at("holds").get<bool>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bound report: ") + e.what());
  }
}

BoundViolation::BoundViolation(BoundReport report)
    : std::runtime_error(violation_message(report)), report_(std::move(report)) {}

BoundReport verify_bounds(const Eigen::MatrixXd& x, const InducingPointSet& z,
                          const KernelConfig& theta, double rho,
                          std::optional<double> side) {
  theta.validate();
  check_rho(rho);
  if (theta.variance != 1.0) {
    throw InvalidArgument("verify_bounds: the separation bound assumes v = 1");
  }
  if (x.rows() == 0 || z.empty()) {
    throw InvalidArgument("verify_bounds: X and Z must be non-empty");
  }
  if (x.cols() != z.dim()) {
    throw InvalidArgument("verify_bounds: dimension mismatch between X and Z");
  }
  if (z.size() > x.rows()) {
    throw InvalidArgument("verify_bounds: more inducing points than data");
  }

  BoundReport r;
  r.n = static_cast<std::size_t>(x.rows());
  r.m = static_cast<std::size_t>(z.size());
  r.dim = x.cols();
  r.lengthscale = theta.lengthscale;
  r.rho = rho;
  r.side = side ? *side
                : (x.colwise().maxCoeff() - x.colwise().minCoeff()).maxCoeff();
  if (r.side > 0.0) {
    const BoundParams p{r.n, r.dim, r.side, theta.lengthscale, rho};
    r.alpha = p.alpha();
    r.alpha_ratio = r.alpha / p.volume();
    if (!p.degenerate()) {
      r.theorem1 = theorem1_bound(p);
      r.theorem1_limit = theorem1_limit(p);
    }
  } else {
    r.alpha = BoundParams{r.n, r.dim, 1.0, theta.lengthscale, rho}.alpha();
  }

  const NystromResidual res = nystrom_residual(x, z.points, theta);
  r.empirical_frobenius = res.frobenius;
  r.empirical_trace = res.trace;
  r.theorem2 = theorem2_bound(r.n, r.m, rho);

  const SpectrumCache spec = SpectrumCache::of(kernel_matrix(x, theta));
  r.eigenvalues.assign(spec.eigenvalues.data(),
                       spec.eigenvalues.data() + spec.eigenvalues.size());
  if (r.m < r.n) r.burt = burt_bound(spec, r.m);
  r.lambda_max_kz = SpectrumCache::of(kernel_matrix(z.points, theta)).eigenvalues(0);

  r.tolerance = 1e-8 * static_cast<double>(r.n) * theta.variance;
  r.holds = r.empirical_frobenius <= r.theorem2 + r.tolerance;
  if (!r.holds) throw BoundViolation(r);
  return r;
}

}  // namespace streamgp
