#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include "json.hpp"

#include "streamgp/streaming.hpp"

namespace streamgp {

/// Settings of one `stream` run. The optional method parameters are
/// required exactly when the method uses them:
///   rho              oips, oips-opt
///   n_inducing       kmeans-opt
///   points_per_dim   grid
/// and opt_steps / adam_alpha / kmeans_iters only matter for the methods that
/// optimize or cluster.
struct ExperimentConfig {
  StreamMethod method = StreamMethod::oips;
  std::optional<double> rho;
  std::optional<Eigen::Index> n_inducing;
  std::optional<Eigen::Index> points_per_dim;
  int kmeans_iters = kDefaultKmeansIters;
  /// Empty means the median heuristic on the first batch.
  std::optional<double> lengthscale;
  double variance = 1.0;
  double noise_var = kDefaultNoiseVar;
  std::size_t n_batches = 4;
  int opt_steps = kDefaultOptSteps;
  double adam_alpha = 1e-2;
  std::uint64_t seed = 0;
  std::string train_path;
  std::string test_path;
  std::string metrics_path = "metrics.csv";
  std::string state_path = "state.json";

  /// Throws InvalidArgument for a missing method parameter or an
  /// out-of-range value.
  void validate() const;
  /// Fills unset method parameters with their documented defaults and drops
  /// the ones the method ignores.
  void apply_method_defaults();

  /// Only the fields relevant to `method` are written.
  nlohmann::json to_json() const;
  /// Unknown keys are rejected.
  static ExperimentConfig from_json(const nlohmann::json& j);

  StreamConfig stream_config(double resolved_lengthscale) const;

  bool operator==(const ExperimentConfig&) const = default;
};

/// median_heuristic over the first batch, the default lengthscale of a
/// `stream` run.
double first_batch_lengthscale(const StreamingDataset& data);

/// Entry point shared by the executable and the tests. Returns the process
/// exit code: 0 success, 2 usage error, 1 runtime or numerical failure.
int run_cli(const std::vector<std::string>& args, std::ostream& out,
            std::ostream& err);

}  // namespace streamgp
