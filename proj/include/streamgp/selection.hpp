#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include <Eigen/Dense>

#include "streamgp/kernel.hpp"

namespace streamgp {

/// Ordered inducing locations Z (one row per point).
///
/// Sets built only through oips_update carry `separated == true`: every
/// pair of points then has correlation k/v strictly below `rho`. Baseline
/// sets and sets moved by an optimizer have `separated == false`.
struct InducingPointSet {
  Eigen::MatrixXd points;
  double rho = 0.0;
  /// Stream position at which each point was accepted (OIPS sets), or the
  /// row index for sets produced in one shot.
  std::vector<std::size_t> creation_order;
  bool separated = false;

  Eigen::Index size() const { return points.rows(); }
  Eigen::Index dim() const { return points.cols(); }
  bool empty() const { return points.rows() == 0; }

  /// Non-OIPS set from raw locations.
  static InducingPointSet from_points(Eigen::MatrixXd points);
  /// Empty OIPS set over D-dimensional inputs.
  static InducingPointSet empty_oips(double rho, Eigen::Index dim);

  bool operator==(const InducingPointSet&) const;
};

/// max_j k(x, Z_j) / v, or -infinity for an empty set.
double max_correlation(const InducingPointSet& z,
                       const Eigen::Ref<const Eigen::VectorXd>& x,
                       double lengthscale);

/// Input-space distance at which the correlation equals rho.
double acceptance_radius(double lengthscale, double rho);

/// One step of online inducing point selection.
InducingPointSet oips_update(const InducingPointSet& z,
                             const Eigen::Ref<const Eigen::VectorXd>& x,
                             const KernelConfig& cfg, std::size_t position = 0);

/// Applies oips_update to the rows of X in order. Row i is given stream
/// position `start_position + i`.
InducingPointSet oips_batch(const InducingPointSet& z, const Eigen::MatrixXd& x,
                            const KernelConfig& cfg,
                            std::size_t start_position = 0);

/// Indices (into X) of the rows accepted by a fresh OIPS pass over X.
std::vector<Eigen::Index> oips_indices(const Eigen::MatrixXd& x, double rho,
                                       double lengthscale);

constexpr int kDefaultKmeansIters = 20;

/// k-means++ seeding followed by at most `iters` Lloyd iterations (stops
/// early once assignments no longer change).
InducingPointSet kmeans_select(const Eigen::MatrixXd& x, Eigen::Index m,
                               int iters, std::uint64_t seed);

struct GridSpec {
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;
  Eigen::Index points_per_dim = 2;

  void validate() const;
  Eigen::Index dim() const { return lower.size(); }
  Eigen::Index total_points() const;

  /// Tightest grid bounds around the rows of X.
  static GridSpec bounding(const Eigen::MatrixXd& x, Eigen::Index points_per_dim);
};

/// Cartesian product of per-dimension linspaces, endpoints included. The
/// first dimension varies fastest.
InducingPointSet grid_select(const GridSpec& spec);

/// Expands the bounds to cover X_new.
GridSpec grid_adapt(const GridSpec& spec, const Eigen::MatrixXd& x_new);

/// Writes one row per point, header z1..zD.
void save_inducing_csv(const std::filesystem::path& path,
                       const InducingPointSet& z);
InducingPointSet load_inducing_csv(const std::filesystem::path& path);

}  // namespace streamgp
