#include "streamgp/data.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "streamgp/csv.hpp"
#include "streamgp/errors.hpp"

namespace streamgp {

namespace {

constexpr Eigen::Index kDimC = 3;

Eigen::VectorXd sorted(Eigen::VectorXd v) {
  std::sort(v.data(), v.data() + v.size());
  return v;
}

Eigen::VectorXd stratified(std::size_t n, double lower, double upper,
                           std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Eigen::VectorXd v(static_cast<Eigen::Index>(n));
  const double width = (upper - lower) / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    v(static_cast<Eigen::Index>(i)) =
        lower + (static_cast<double>(i) + unif(rng)) * width;
  }
  return v;
}

Eigen::VectorXd targets(DatasetKind kind, const Eigen::MatrixXd& x,
                        double noise_sd, std::mt19937_64& rng) {
  std::normal_distribution<double> noise(0.0, 1.0);
  Eigen::VectorXd y(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    y(i) = latent_function(kind, x.row(i).transpose());
    if (noise_sd > 0.0) y(i) += noise_sd * noise(rng);
  }
  return y;
}

}  // namespace

DatasetKind parse_dataset_kind(const std::string& s) {
  if (s == "A" || s == "a") return DatasetKind::A;
  if (s == "B" || s == "b") return DatasetKind::B;
  if (s == "C" || s == "c") return DatasetKind::C;
  throw InvalidArgument("unknown dataset kind '" + s + "' (expected A, B or C)");
}

const char* to_string(DatasetKind kind) {
  switch (kind) {
    case DatasetKind::A:
      return "A";
    case DatasetKind::B:
      return "B";
    case DatasetKind::C:
      return "C";
  }
  return "?";
}

DatasetLayout dataset_layout(DatasetKind kind) {
  DatasetLayout layout;
  if (kind == DatasetKind::B) layout.gap = std::make_pair(4.0, 7.0);
  if (kind == DatasetKind::C) {
    // Inputs are unbounded Gaussian draws; the interval is unused.
    layout.lower = 0.0;
    layout.upper = 0.0;
  }
  return layout;
}

DatasetBatch StreamingDataset::batch(std::size_t i) const {
  if (i >= batches.size()) {
    throw InvalidArgument("batch index " + std::to_string(i) + " out of range");
  }
  const auto& r = batches[i];
  const auto b = static_cast<Eigen::Index>(r.begin);
  const auto n = static_cast<Eigen::Index>(r.size());
  return {x_train.middleRows(b, n), y_train.segment(b, n)};
}

double latent_function(DatasetKind kind, const Eigen::Ref<const Eigen::VectorXd>& x) {
  switch (kind) {
    case DatasetKind::A:
    case DatasetKind::B:
      return std::sin(x(0));
    case DatasetKind::C: {
      const double r = x.norm();
      return r == 0.0 ? 1.0 : std::sin(r) / r;
    }
  }
  throw InvalidArgument("invalid dataset kind");
}

StreamingDataset gen_dataset(DatasetKind kind, std::size_t n_train,
                             std::size_t n_test, double noise_sd,
                             std::uint64_t seed, std::size_t n_batches) {
  if (n_train < 1 || n_test < 1) {
    throw InvalidArgument("gen_dataset: n_train and n_test must be >= 1");
  }
  if (!(noise_sd >= 0.0) || !std::isfinite(noise_sd)) {
    throw InvalidArgument("gen_dataset: noise_sd must be non-negative");
  }
  StreamingDataset ds;
  ds.kind = kind;
  ds.seed = seed;
  ds.noise_sd = noise_sd;
  ds.layout = dataset_layout(kind);
  ds.batches = partition_batches(n_train, n_batches);

  std::mt19937_64 rng(seed);
  const auto ntr = static_cast<Eigen::Index>(n_train);
  const auto nte = static_cast<Eigen::Index>(n_test);
  const double lo = ds.layout.lower;
  const double hi = ds.layout.upper;
  switch (kind) {
    case DatasetKind::A: {
      ds.x_train = Eigen::VectorXd::LinSpaced(ntr, lo, hi);
      if (ntr == 1) ds.x_train(0, 0) = lo;
      ds.x_test = stratified(n_test, lo, hi, rng);
      break;
    }
    case DatasetKind::B: {
      const auto [g0, g1] = *ds.layout.gap;
      const double kept = (g0 - lo) + (hi - g1);
      std::uniform_real_distribution<double> unif(0.0, kept);
      Eigen::VectorXd x(ntr);
      for (Eigen::Index i = 0; i < ntr; ++i) {
        double u = unif(rng);
        // Left part is [lo, g0); the right part (g1, hi] is reached by a
        // shift, nudged off the open gap boundary.
        x(i) = u < g0 - lo ? lo + u : std::max(g1 + (u - (g0 - lo)),
                                               std::nextafter(g1, hi));
      }
      ds.x_train = sorted(std::move(x));
      ds.x_test = stratified(n_test, lo, hi, rng);
      break;
    }
    case DatasetKind::C: {
      std::normal_distribution<double> normal(0.0, 1.0);
      ds.x_train.resize(ntr, kDimC);
      for (Eigen::Index i = 0; i < ntr; ++i) {
        for (Eigen::Index d = 0; d < kDimC; ++d) ds.x_train(i, d) = normal(rng);
      }
      ds.x_test.resize(nte, kDimC);
      for (Eigen::Index i = 0; i < nte; ++i) {
        for (Eigen::Index d = 0; d < kDimC; ++d) ds.x_test(i, d) = normal(rng);
      }
      break;
    }
  }
  ds.y_train = targets(kind, ds.x_train, noise_sd, rng);
  ds.y_test = targets(kind, ds.x_test, noise_sd, rng);
  return ds;
}

std::vector<BatchRange> partition_batches(std::size_t n, std::size_t n_batches) {
  if (n_batches < 1 || n_batches > n) {
    throw InvalidArgument("partition_batches: need 1 <= n_batches <= N (N = " +
                          std::to_string(n) + ", n_batches = " +
                          std::to_string(n_batches) + ")");
  }
  const std::size_t base = n / n_batches;
  const std::size_t extra = n % n_batches;
  std::vector<BatchRange> out;
  out.reserve(n_batches);
  std::size_t begin = 0;
  for (std::size_t b = 0; b < n_batches; ++b) {
    const std::size_t len = base + (b < extra ? 1 : 0);
    out.push_back({begin, begin + len});
    begin += len;
  }
  return out;
}

void save_csv(const std::filesystem::path& path, const Eigen::MatrixXd& x,
              const Eigen::VectorXd& y) {
  if (x.rows() != y.size()) {
    throw InvalidArgument("save_csv: X and y row counts differ");
  }
  std::vector<std::string> header;
  for (Eigen::Index d = 0; d < x.cols(); ++d) {
    header.push_back("x" + std::to_string(d + 1));
  }
  header.emplace_back("y");
  Eigen::MatrixXd table(x.rows(), x.cols() + 1);
  table << x, y;
  write_numeric_csv(path, header, table);
}

DatasetBatch load_csv(const std::filesystem::path& path) {
  NumericTable t = read_numeric_csv(path);
  const auto cols = static_cast<Eigen::Index>(t.header.size());
  if (cols < 2 || t.header.back() != "y") {
    throw ParseError(path.string() + ":1: header must be x1..xD,y");
  }
  for (Eigen::Index d = 0; d + 1 < cols; ++d) {
    if (t.header[static_cast<std::size_t>(d)] != "x" + std::to_string(d + 1)) {
      throw ParseError(path.string() + ":1: header must be x1..xD,y");
    }
  }
  if (t.values.rows() == 0) {
    throw ParseError(path.string() + ": no data rows (N >= 1 required)");
  }
  return {t.values.leftCols(cols - 1), t.values.col(cols - 1)};
}

nlohmann::json dataset_sidecar(const StreamingDataset& ds) {
  nlohmann::json j;
  j["kind"] = to_string(ds.kind);
  j["seed"] = ds.seed;
  j["noise_sd"] = ds.noise_sd;
  j["n_train"] = ds.x_train.rows();
  j["n_test"] = ds.x_test.rows();
  j["dim"] = ds.x_train.cols();
  if (ds.kind == DatasetKind::C) {
    j["inputs"] = "standard normal";
    j["latent"] = "sin(|x|)/|x|";
  } else {
    j["interval"] = {ds.layout.lower, ds.layout.upper};
    j["latent"] = "sin(x)";
  }
  j["gap"] = ds.layout.gap ? nlohmann::json{ds.layout.gap->first, ds.layout.gap->second}
                           : nlohmann::json(nullptr);
  nlohmann::json b = nlohmann::json::array();
  for (const auto& r : ds.batches) b.push_back({r.begin, r.end});
  j["batch_boundaries"] = b;
  return j;
}

Eigen::MatrixXd uniform_hypercube(std::size_t n, Eigen::Index dim, double side,
                                  std::uint64_t seed) {
  if (dim < 1) throw InvalidArgument("uniform_hypercube: dim must be >= 1");
  if (!(side > 0.0)) throw InvalidArgument("uniform_hypercube: side must be > 0");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, side);
  Eigen::MatrixXd x(static_cast<Eigen::Index>(n), dim);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index d = 0; d < dim; ++d) x(i, d) = unif(rng);
  }
  return x;
}

}  // namespace streamgp
