#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include "json.hpp"

namespace streamgp {

struct DatasetBatch {
  Eigen::MatrixXd x;
  Eigen::VectorXd y;

  Eigen::Index size() const { return x.rows(); }
};

/// Half-open row range [begin, end).
struct BatchRange {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const { return end - begin; }
  bool operator==(const BatchRange&) const = default;
};

enum class DatasetKind { A, B, C };

DatasetKind parse_dataset_kind(const std::string& s);
const char* to_string(DatasetKind kind);

constexpr double kDefaultDataNoiseSd = 0.1;

/// Generator constants, recorded in the JSON sidecar.
struct DatasetLayout {
  double lower = 0.0;
  double upper = 10.0;
  /// Open interval removed from the training inputs (kind B only).
  std::optional<std::pair<double, double>> gap;
};

DatasetLayout dataset_layout(DatasetKind kind);

struct StreamingDataset {
  DatasetKind kind = DatasetKind::A;
  std::uint64_t seed = 0;
  double noise_sd = kDefaultDataNoiseSd;
  DatasetLayout layout;

  Eigen::MatrixXd x_train;
  Eigen::VectorXd y_train;
  Eigen::MatrixXd x_test;
  Eigen::VectorXd y_test;
  std::vector<BatchRange> batches;

  std::size_t n_batches() const { return batches.size(); }
  DatasetBatch batch(std::size_t i) const;
  DatasetBatch train() const { return {x_train, y_train}; }
  DatasetBatch test() const { return {x_test, y_test}; }
};

/// Noise-free target of a generated dataset at x.
///   A, B: sin(x)
///   C:    sin(|x|) / |x|, equal to 1 at the origin
double latent_function(DatasetKind kind, const Eigen::Ref<const Eigen::VectorXd>& x);

/// A: training inputs equally spaced on [0, 10].
/// B: training inputs uniform on [0, 10] minus the gap (4, 7), sorted.
/// C: training inputs standard normal in 3D, in generation order.
/// Test inputs for A and B are stratified over the full interval (one
/// uniform draw per equal-width cell) and sorted; C uses fresh normal draws.
StreamingDataset gen_dataset(DatasetKind kind, std::size_t n_train = 200,
                             std::size_t n_test = 200,
                             double noise_sd = kDefaultDataNoiseSd,
                             std::uint64_t seed = 0, std::size_t n_batches = 4);

/// Contiguous ranges covering [0, N); the first N % n_batches ranges are one
/// element longer.
std::vector<BatchRange> partition_batches(std::size_t n, std::size_t n_batches);

/// Header x1..xD,y.
void save_csv(const std::filesystem::path& path, const Eigen::MatrixXd& x,
              const Eigen::VectorXd& y);
DatasetBatch load_csv(const std::filesystem::path& path);

nlohmann::json dataset_sidecar(const StreamingDataset& ds);

/// Rows drawn uniformly on [0, side]^D.
Eigen::MatrixXd uniform_hypercube(std::size_t n, Eigen::Index dim, double side,
                                  std::uint64_t seed);

}  // namespace streamgp
