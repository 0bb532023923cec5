#include "streamgp/selection.hpp"

#include <cmath>
#include <limits>
#include <random>
#include <string>

#include "streamgp/csv.hpp"
#include "streamgp/errors.hpp"

namespace streamgp {

namespace {

void check_rho(double rho) {
  if (!(rho > 0.0 && rho < 1.0)) {
    throw InvalidArgument("OIPS threshold rho must lie in (0, 1), got " +
                          std::to_string(rho));
  }
}

void append_row(Eigen::MatrixXd& m, const Eigen::Ref<const Eigen::VectorXd>& x) {
  const Eigen::Index r = m.rows();
  m.conservativeResize(r + 1, x.size());
  m.row(r) = x.transpose();
}

double squared_distance_rows(const Eigen::MatrixXd& a, Eigen::Index i,
                             const Eigen::MatrixXd& b, Eigen::Index j) {
  return squared_distance(a.row(i), b.row(j));
}

}  // namespace

InducingPointSet InducingPointSet::from_points(Eigen::MatrixXd points) {
  InducingPointSet z;
  z.creation_order.resize(static_cast<std::size_t>(points.rows()));
  for (std::size_t i = 0; i < z.creation_order.size(); ++i) {
    z.creation_order[i] = i;
  }
  z.points = std::move(points);
  return z;
}

InducingPointSet InducingPointSet::empty_oips(double rho, Eigen::Index dim) {
  check_rho(rho);
  if (dim < 1) {
    throw InvalidArgument("inducing set dimension must be positive");
  }
  InducingPointSet z;
  z.points.resize(0, dim);
  z.rho = rho;
  z.separated = true;
  return z;
}

bool InducingPointSet::operator==(const InducingPointSet& o) const {
  return points.rows() == o.points.rows() && points.cols() == o.points.cols() &&
         points == o.points && rho == o.rho &&
         creation_order == o.creation_order && separated == o.separated;
}

double max_correlation(const InducingPointSet& z,
                       const Eigen::Ref<const Eigen::VectorXd>& x,
                       double lengthscale) {
  if (z.dim() != x.size()) {
    throw InvalidArgument("OIPS: dimension mismatch (" + std::to_string(z.dim()) +
                          " vs " + std::to_string(x.size()) + ")");
  }
  double best = -std::numeric_limits<double>::infinity();
  const double inv_l2 = 1.0 / (lengthscale * lengthscale);
  for (Eigen::Index j = 0; j < z.size(); ++j) {
    const double d2 = squared_distance(z.points.row(j), x);
    best = std::max(best, std::exp(-d2 * inv_l2));
  }
  return best;
}

double acceptance_radius(double lengthscale, double rho) {
  check_rho(rho);
  return lengthscale * std::sqrt(-std::log(rho));
}

InducingPointSet oips_update(const InducingPointSet& z,
                             const Eigen::Ref<const Eigen::VectorXd>& x,
                             const KernelConfig& cfg, std::size_t position) {
  check_rho(z.rho);
  cfg.validate();
  if (max_correlation(z, x, cfg.lengthscale) < z.rho) {
    InducingPointSet out = z;
    append_row(out.points, x);
    out.creation_order.push_back(position);
    return out;
  }
  return z;
}

InducingPointSet oips_batch(const InducingPointSet& z, const Eigen::MatrixXd& x,
                            const KernelConfig& cfg, std::size_t start_position) {
  check_rho(z.rho);
  cfg.validate();
  if (x.rows() > 0 && x.cols() != z.dim()) {
    throw InvalidArgument("OIPS: dimension mismatch (" + std::to_string(z.dim()) +
                          " vs " + std::to_string(x.cols()) + ")");
  }
  // Same rule as oips_update, accumulated in place.
  InducingPointSet out = z;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const Eigen::VectorXd xi = x.row(i).transpose();
    if (max_correlation(out, xi, cfg.lengthscale) < out.rho) {
      append_row(out.points, xi);
      out.creation_order.push_back(start_position + static_cast<std::size_t>(i));
    }
  }
  return out;
}

std::vector<Eigen::Index> oips_indices(const Eigen::MatrixXd& x, double rho,
                                       double lengthscale) {
  const auto z = oips_batch(InducingPointSet::empty_oips(rho, x.cols()), x,
                            KernelConfig{lengthscale, 1.0});
  std::vector<Eigen::Index> idx;
  idx.reserve(z.creation_order.size());
  for (auto p : z.creation_order) idx.push_back(static_cast<Eigen::Index>(p));
  return idx;
}

InducingPointSet kmeans_select(const Eigen::MatrixXd& x, Eigen::Index m,
                               int iters, std::uint64_t seed) {
  const Eigen::Index n = x.rows();
  if (n == 0) {
    throw InvalidArgument("kmeans_select: empty data");
  }
  if (m < 1 || m > n) {
    throw InvalidArgument("kmeans_select: need 1 <= M <= N (M = " +
                          std::to_string(m) + ", N = " + std::to_string(n) + ")");
  }
  if (iters < 0) {
    throw InvalidArgument("kmeans_select: iters must be non-negative");
  }
  std::mt19937_64 rng(seed);

  // k-means++ seeding.
  Eigen::MatrixXd centers(m, x.cols());
  std::vector<bool> chosen(static_cast<std::size_t>(n), false);
  std::uniform_int_distribution<Eigen::Index> first(0, n - 1);
  Eigen::Index idx = first(rng);
  centers.row(0) = x.row(idx);
  chosen[static_cast<std::size_t>(idx)] = true;
  Eigen::VectorXd d2(n);
  for (Eigen::Index i = 0; i < n; ++i) d2(i) = squared_distance_rows(x, i, centers, 0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (Eigen::Index c = 1; c < m; ++c) {
    const double total = d2.sum();
    if (total > 0.0) {
      double target = unif(rng) * total;
      idx = n - 1;
      for (Eigen::Index i = 0; i < n; ++i) {
        target -= d2(i);
        if (target < 0.0 && d2(i) > 0.0) {
          idx = i;
          break;
        }
      }
      while (d2(idx) == 0.0 && idx > 0) --idx;
    } else {
      // Every point coincides with a center; take the next unused index.
      idx = 0;
      while (chosen[static_cast<std::size_t>(idx)]) ++idx;
    }
    centers.row(c) = x.row(idx);
    chosen[static_cast<std::size_t>(idx)] = true;
    for (Eigen::Index i = 0; i < n; ++i) {
      d2(i) = std::min(d2(i), squared_distance_rows(x, i, centers, c));
    }
  }

  // Lloyd iterations.
  std::vector<Eigen::Index> assign(static_cast<std::size_t>(n), -1);
  for (int it = 0; it < iters; ++it) {
    bool changed = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      Eigen::Index best = 0;
      double best_d = squared_distance_rows(x, i, centers, 0);
      for (Eigen::Index c = 1; c < m; ++c) {
        const double d = squared_distance_rows(x, i, centers, c);
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      if (assign[static_cast<std::size_t>(i)] != best) {
        assign[static_cast<std::size_t>(i)] = best;
        changed = true;
      }
    }
    if (!changed) break;
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(m, x.cols());
    Eigen::VectorXi counts = Eigen::VectorXi::Zero(m);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto c = assign[static_cast<std::size_t>(i)];
      sums.row(c) += x.row(i);
      counts(c) += 1;
    }
    for (Eigen::Index c = 0; c < m; ++c) {
      if (counts(c) > 0) centers.row(c) = sums.row(c) / counts(c);
    }
  }
  return InducingPointSet::from_points(std::move(centers));
}

void GridSpec::validate() const {
  if (lower.size() == 0 || lower.size() != upper.size()) {
    throw InvalidArgument("grid bounds must be non-empty with matching sizes");
  }
  if (points_per_dim < 1) {
    throw InvalidArgument("grid points_per_dim must be positive");
  }
  for (Eigen::Index d = 0; d < lower.size(); ++d) {
    if (!std::isfinite(lower(d)) || !std::isfinite(upper(d))) {
      throw InvalidArgument("grid bounds must be finite");
    }
    if (points_per_dim < 2) {
      if (lower(d) != upper(d)) {
        throw InvalidArgument("grid with fewer than 2 points per dimension "
                              "needs lower == upper");
      }
    } else if (!(lower(d) < upper(d))) {
      throw InvalidArgument("grid needs lower < upper in every dimension");
    }
  }
}

Eigen::Index GridSpec::total_points() const {
  Eigen::Index total = 1;
  for (Eigen::Index d = 0; d < dim(); ++d) total *= points_per_dim;
  return total;
}

GridSpec GridSpec::bounding(const Eigen::MatrixXd& x, Eigen::Index points_per_dim) {
  if (x.rows() == 0) {
    throw InvalidArgument("grid bounds need at least one point");
  }
  GridSpec g;
  g.lower = x.colwise().minCoeff().transpose();
  g.upper = x.colwise().maxCoeff().transpose();
  g.points_per_dim = points_per_dim;
  return g;
}

InducingPointSet grid_select(const GridSpec& spec) {
  spec.validate();
  const Eigen::Index dim = spec.dim();
  const Eigen::Index p = spec.points_per_dim;
  const Eigen::Index total = spec.total_points();
  Eigen::MatrixXd pts(total, dim);
  for (Eigen::Index flat = 0; flat < total; ++flat) {
    Eigen::Index rem = flat;
    for (Eigen::Index d = 0; d < dim; ++d) {
      const Eigen::Index k = rem % p;
      rem /= p;
      if (p == 1) {
        pts(flat, d) = spec.lower(d);
      } else if (k == p - 1) {
        pts(flat, d) = spec.upper(d);
      } else {
        const double t = static_cast<double>(k) / static_cast<double>(p - 1);
        pts(flat, d) = spec.lower(d) + t * (spec.upper(d) - spec.lower(d));
      }
    }
  }
  return InducingPointSet::from_points(std::move(pts));
}

GridSpec grid_adapt(const GridSpec& spec, const Eigen::MatrixXd& x_new) {
  if (x_new.rows() == 0) return spec;
  if (x_new.cols() != spec.dim()) {
    throw InvalidArgument("grid_adapt: dimension mismatch");
  }
  GridSpec out = spec;
  out.lower = spec.lower.cwiseMin(x_new.colwise().minCoeff().transpose());
  out.upper = spec.upper.cwiseMax(x_new.colwise().maxCoeff().transpose());
  return out;
}

void save_inducing_csv(const std::filesystem::path& path,
                       const InducingPointSet& z) {
  std::vector<std::string> header;
  for (Eigen::Index d = 0; d < z.dim(); ++d) {
    header.push_back("z" + std::to_string(d + 1));
  }
  write_numeric_csv(path, header, z.points);
}

InducingPointSet load_inducing_csv(const std::filesystem::path& path) {
  auto table = read_numeric_csv(path);
  return InducingPointSet::from_points(std::move(table.values));
}

}  // namespace streamgp
