#include "streamgp/cli.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include "CLI11.hpp"

#include "streamgp/bounds.hpp"
#include "streamgp/csv.hpp"
#include "streamgp/data.hpp"
#include "streamgp/errors.hpp"
#include "streamgp/selection.hpp"

namespace streamgp {

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

bool uses_rho(StreamMethod m) {
  return m == StreamMethod::oips || m == StreamMethod::oips_opt;
}
bool uses_kmeans(StreamMethod m) { return m == StreamMethod::kmeans_opt; }
bool uses_grid(StreamMethod m) { return m == StreamMethod::grid; }
bool uses_adam(StreamMethod m) {
  return m == StreamMethod::oips_opt || m == StreamMethod::kmeans_opt;
}

std::uint64_t parse_seed(const std::string& s, const char* what) {
  std::uint64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || p != s.data() + s.size()) {
    throw UsageError(std::string(what) + ": invalid seed '" + s + "'");
  }
  return v;
}

std::uint64_t default_seed() {
  const char* env = std::getenv("STREAMGP_SEED");
  if (env == nullptr || *env == '\0') return 0;
  return parse_seed(env, "STREAMGP_SEED");
}

std::optional<double> parse_lengthscale(const std::string& s) {
  if (s == "median") return std::nullopt;
  double v = 0.0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || p != s.data() + s.size() || !(v > 0.0)) {
    throw UsageError("--lengthscale must be 'median' or a positive number, got '" +
                     s + "'");
  }
  return v;
}

nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
}

void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

double quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(pos);
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

// ---------------------------------------------------------------- gen-data

struct GenDataArgs {
  std::string kind;
  std::string seed;
  std::size_t n_train = 200;
  std::size_t n_test = 200;
  double noise_sd = kDefaultDataNoiseSd;
  std::size_t n_batches = 4;
  std::string out_dir = ".";
};

int cmd_gen_data(const GenDataArgs& a, std::ostream& out) {
  const std::uint64_t seed = a.seed.empty() ? default_seed() : parse_seed(a.seed, "--seed");
  const StreamingDataset ds = gen_dataset(parse_dataset_kind(a.kind), a.n_train,
                                          a.n_test, a.noise_sd, seed, a.n_batches);
  const std::filesystem::path dir(a.out_dir);
  std::filesystem::create_directories(dir);
  save_csv(dir / "train.csv", ds.x_train, ds.y_train);
  save_csv(dir / "test.csv", ds.x_test, ds.y_test);
  write_json(dir / "dataset.json", dataset_sidecar(ds));
  out << "wrote " << ds.x_train.rows() << " train / " << ds.x_test.rows()
      << " test rows (D = " << ds.x_train.cols() << ") to " << dir.string() << '\n';
  return 0;
}

// ------------------------------------------------------------------ stream

struct StreamArgs {
  std::string config;
  std::string save_config;
  std::string method;
  double rho = 0.0;
  Eigen::Index n_inducing = 0;
  Eigen::Index points_per_dim = 0;
  int kmeans_iters = 0;
  std::string lengthscale;
  double variance = 0.0;
  double noise_var = 0.0;
  std::size_t n_batches = 0;
  int opt_steps = 0;
  double adam_alpha = 0.0;
  std::string seed;
  std::string train;
  std::string test;
  std::string metrics;
  std::string state;
  bool timing = false;
};

struct StreamOptions {
  CLI::Option* method;
  CLI::Option* rho;
  CLI::Option* n_inducing;
  CLI::Option* points_per_dim;
  CLI::Option* kmeans_iters;
  CLI::Option* lengthscale;
  CLI::Option* variance;
  CLI::Option* noise_var;
  CLI::Option* n_batches;
  CLI::Option* opt_steps;
  CLI::Option* adam_alpha;
  CLI::Option* seed;
  CLI::Option* train;
  CLI::Option* test;
  CLI::Option* metrics;
  CLI::Option* state;
};

ExperimentConfig resolve_stream_config(const StreamArgs& a, const StreamOptions& o) {
  ExperimentConfig cfg;
  cfg.seed = default_seed();
  if (!a.config.empty()) cfg = ExperimentConfig::from_json(read_json(a.config));
  if (o.method->count()) cfg.method = parse_stream_method(a.method);
  if (o.rho->count()) cfg.rho = a.rho;
  if (o.n_inducing->count()) cfg.n_inducing = a.n_inducing;
  if (o.points_per_dim->count()) cfg.points_per_dim = a.points_per_dim;
  if (o.kmeans_iters->count()) cfg.kmeans_iters = a.kmeans_iters;
  if (o.lengthscale->count()) cfg.lengthscale = parse_lengthscale(a.lengthscale);
  if (o.variance->count()) cfg.variance = a.variance;
  if (o.noise_var->count()) cfg.noise_var = a.noise_var;
  if (o.n_batches->count()) cfg.n_batches = a.n_batches;
  if (o.opt_steps->count()) cfg.opt_steps = a.opt_steps;
  if (o.adam_alpha->count()) cfg.adam_alpha = a.adam_alpha;
  if (o.seed->count()) cfg.seed = parse_seed(a.seed, "--seed");
  if (o.train->count()) cfg.train_path = a.train;
  if (o.test->count()) cfg.test_path = a.test;
  if (o.metrics->count()) cfg.metrics_path = a.metrics;
  if (o.state->count()) cfg.state_path = a.state;
  if (cfg.train_path.empty() || cfg.test_path.empty()) {
    throw UsageError("stream: --train and --test (or a config providing them) are required");
  }
  cfg.apply_method_defaults();
  cfg.validate();
  return cfg;
}

int cmd_stream(const StreamArgs& a, const StreamOptions& o, std::ostream& out) {
  const ExperimentConfig cfg = resolve_stream_config(a, o);
  if (!a.save_config.empty()) write_json(a.save_config, cfg.to_json());

  const DatasetBatch train = load_csv(cfg.train_path);
  const DatasetBatch test = load_csv(cfg.test_path);
  if (train.x.cols() != test.x.cols()) {
    throw InvalidArgument("stream: train and test files have different input dimensions");
  }
  StreamingDataset ds;
  ds.seed = cfg.seed;
  ds.x_train = train.x;
  ds.y_train = train.y;
  ds.x_test = test.x;
  ds.y_test = test.y;
  ds.batches = partition_batches(static_cast<std::size_t>(train.x.rows()), cfg.n_batches);

  const double l = cfg.lengthscale ? *cfg.lengthscale : first_batch_lengthscale(ds);
  const StreamResult result = run_stream(ds, cfg.stream_config(l));
  write_metrics_csv(cfg.metrics_path, result.metrics, a.timing);
  const auto& last = result.metrics.back();
  write_json(cfg.state_path,
             state_to_json(result.final_state, StreamCursor{last.batch_index, last.n_seen}));
  std::size_t clamped = 0;
  for (const auto& m : result.metrics) clamped += m.clamped;
  out << "method " << to_string(cfg.method) << ", lengthscale " << format_double(l)
      << ": final M = " << last.m << ", final test NLL = " << format_double(last.test_nll)
      << '\n';
  if (clamped > 0) {
    out << "note: " << clamped << " negative predictive variances clamped to 0\n";
  }
  return 0;
}

// ------------------------------------------------------------------ bounds

struct BoundsArgs {
  std::size_t n = 2000;
  Eigen::Index d = 3;
  double side = 1.0;
  double lengthscale = 0.3;
  double rho = 0.7;
  std::string seed;
  std::string data;
  std::string report = "bound_report.json";
  std::string curve = "count_curve.csv";
  std::string norm_curve = "norm_curve.csv";
  std::size_t curve_step = 10;
  std::size_t norm_rows = 8;
};

int cmd_bounds(const BoundsArgs& a, std::ostream& out, std::ostream& err) {
  const std::uint64_t seed = a.seed.empty() ? default_seed() : parse_seed(a.seed, "--seed");
  if (a.curve_step < 1 || a.norm_rows < 1) {
    throw UsageError("bounds: --curve-step and --norm-rows must be >= 1");
  }
  Eigen::MatrixXd x;
  double side = a.side;
  if (!a.data.empty()) {
    x = load_csv(a.data).x;
    side = (x.colwise().maxCoeff() - x.colwise().minCoeff()).maxCoeff();
  } else {
    if (a.n < 1) throw UsageError("bounds: --n must be >= 1");
    x = uniform_hypercube(a.n, a.d, a.side, seed);
  }
  const auto n = static_cast<std::size_t>(x.rows());
  const Eigen::Index dim = x.cols();
  const KernelConfig theta{a.lengthscale, 1.0};

  // OIPS along the stream, remembering |Z| after every prefix.
  std::vector<Eigen::Index> m_after(n + 1, 0);
  InducingPointSet z = InducingPointSet::empty_oips(a.rho, dim);
  for (std::size_t i = 0; i < n; ++i) {
    z = oips_update(z, x.row(static_cast<Eigen::Index>(i)).transpose(), theta, i);
    m_after[i + 1] = z.size();
  }

  const bool have_count_bound = side > 0.0;
  bool degenerate = false;
  {
    auto csv = open_output(a.curve);
    csv << "N,empirical_M,bound_M\n";
    for (std::size_t k = 1; k <= n; ++k) {
      if (k % a.curve_step != 0 && k != n) continue;
      csv << k << ',' << m_after[k] << ',';
      const BoundParams p{k, dim, have_count_bound ? side : 1.0, a.lengthscale, a.rho};
      if (have_count_bound && !p.degenerate()) {
        csv << format_double(theorem1_bound(p));
      } else {
        degenerate = true;
        csv << "NA";
      }
      csv << '\n';
    }
  }
  if (degenerate) {
    err << "streamgp: count bound is degenerate (alpha >= a^D); bound_M reported as NA\n";
  }

  {
    auto csv = open_output(a.norm_curve);
    csv << "N,M,empirical_norm,eq5,eq6\n";
    std::set<std::size_t> sizes;
    for (std::size_t j = 1; j <= a.norm_rows; ++j) {
      sizes.insert(std::max<std::size_t>(1, (n * j + a.norm_rows / 2) / a.norm_rows));
    }
    for (std::size_t k : sizes) {
      const auto rows = static_cast<Eigen::Index>(k);
      const Eigen::MatrixXd xk = x.topRows(rows);
      const Eigen::MatrixXd zk = z.points.topRows(m_after[k]);
      const NystromResidual res = nystrom_residual(xk, zk, theta);
      const auto mk = static_cast<std::size_t>(m_after[k]);
      csv << k << ',' << mk << ',' << format_double(res.frobenius) << ',';
      if (mk < k) {
        csv << format_double(burt_bound(SpectrumCache::of(kernel_matrix(xk, theta)), mk));
      } else {
        csv << "NA";
      }
      csv << ',' << format_double(theorem2_bound(k, mk, a.rho)) << '\n';
    }
  }

  try {
    const BoundReport report = verify_bounds(x, z, theta, a.rho, side > 0.0 ? std::optional(side) : std::nullopt);
    write_json(a.report, report.to_json());
    out << "N = " << report.n << ", M = " << report.m
        << ", residual = " << format_double(report.empirical_frobenius)
        << " <= bound " << format_double(report.theorem2) << '\n';
  } catch (const BoundViolation& v) {
    write_json(a.report, v.report().to_json());
    throw;
  }
  return 0;
}

// ------------------------------------------------------------- dpp-compare

struct DppArgs {
  std::size_t n = 300;
  Eigen::Index d = 3;
  double side = 1.0;
  double lengthscale = 0.3;
  double rho = 0.7;
  std::size_t replicates = 50;
  std::string seed;
  std::string data;
  std::size_t k = 0;
  std::string out = "dpp_compare.csv";
};

/// Forced subset size: keep the first k OIPS acceptances, or extend with the
/// earliest rejected points of the shuffled stream.
std::vector<Eigen::Index> oips_fill(const std::vector<Eigen::Index>& accepted,
                                    std::size_t n, std::size_t k) {
  if (k <= accepted.size()) {
    return {accepted.begin(), accepted.begin() + static_cast<std::ptrdiff_t>(k)};
  }
  std::vector<Eigen::Index> out = accepted;
  std::vector<bool> used(n, false);
  for (auto i : accepted) used[static_cast<std::size_t>(i)] = true;
  for (std::size_t i = 0; i < n && out.size() < k; ++i) {
    if (!used[i]) out.push_back(static_cast<Eigen::Index>(i));
  }
  return out;
}

int cmd_dpp_compare(const DppArgs& a, CLI::Option* k_opt, std::ostream& out) {
  const std::uint64_t seed = a.seed.empty() ? default_seed() : parse_seed(a.seed, "--seed");
  if (a.replicates < 1) throw UsageError("dpp-compare: --replicates must be >= 1");
  const Eigen::MatrixXd x =
      a.data.empty() ? uniform_hypercube(a.n, a.d, a.side, seed) : load_csv(a.data).x;
  const auto n = static_cast<std::size_t>(x.rows());
  if (n < 1) throw UsageError("dpp-compare: need at least one point");
  const bool forced = k_opt->count() > 0;
  if (forced && (a.k < 1 || a.k > n)) {
    throw UsageError("dpp-compare: --k must lie in [1, N]");
  }
  const KernelConfig theta{a.lengthscale, 1.0};
  const Eigen::MatrixXd k = kernel_matrix(x, theta);
  const SpectrumCache spec = SpectrumCache::of(k);
  const KdppSampler sampler(k);

  auto csv = open_output(a.out);
  csv << "replicate,method,k,log_prob\n";
  std::vector<double> lp_oips, lp_dpp;
  for (std::size_t r = 0; r < a.replicates; ++r) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(r)};
    std::mt19937_64 rng(seq);
    std::vector<Eigen::Index> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Eigen::MatrixXd shuffled(x.rows(), x.cols());
    for (std::size_t i = 0; i < n; ++i) {
      shuffled.row(static_cast<Eigen::Index>(i)) = x.row(perm[i]);
    }
    std::vector<Eigen::Index> picked = oips_indices(shuffled, a.rho, a.lengthscale);
    if (forced) picked = oips_fill(picked, n, a.k);
    std::vector<Eigen::Index> subset;
    subset.reserve(picked.size());
    for (auto i : picked) subset.push_back(perm[static_cast<std::size_t>(i)]);
    const std::size_t size = subset.size();

    const double a_lp = kdpp_log_prob(k, subset, spec);
    const double b_lp = kdpp_log_prob(k, sampler.sample(size, rng), spec);
    lp_oips.push_back(a_lp);
    lp_dpp.push_back(b_lp);
    csv << r << ",oips," << size << ',' << format_double(a_lp) << '\n';
    csv << r << ",kdpp," << size << ',' << format_double(b_lp) << '\n';
  }
  if (!csv) throw std::runtime_error("failed writing " + a.out);
  out << "median log-prob: oips " << format_double(quantile(lp_oips, 0.5)) << " (IQR "
      << format_double(quantile(lp_oips, 0.75) - quantile(lp_oips, 0.25)) << "), kdpp "
      << format_double(quantile(lp_dpp, 0.5)) << " (IQR "
      << format_double(quantile(lp_dpp, 0.75) - quantile(lp_dpp, 0.25)) << ")\n";
  return 0;
}

}  // namespace

void ExperimentConfig::validate() const {
  const std::string m = to_string(method);
  if (uses_rho(method)) {
    if (!rho) throw InvalidArgument("method " + m + " requires rho");
    if (!(*rho > 0.0 && *rho < 1.0)) throw InvalidArgument("rho must lie in (0, 1)");
  }
  if (uses_kmeans(method)) {
    if (!n_inducing) throw InvalidArgument("method " + m + " requires n_inducing");
    if (*n_inducing < 1) throw InvalidArgument("n_inducing must be >= 1");
    if (kmeans_iters < 0) throw InvalidArgument("kmeans_iters must be >= 0");
  }
  if (uses_grid(method)) {
    if (!points_per_dim) throw InvalidArgument("method " + m + " requires points_per_dim");
    if (*points_per_dim < 2) throw InvalidArgument("points_per_dim must be >= 2");
  }
  if (uses_adam(method)) {
    if (opt_steps < 0) throw InvalidArgument("opt_steps must be >= 0");
    if (!(adam_alpha > 0.0)) throw InvalidArgument("adam_alpha must be positive");
  }
  if (lengthscale && !(*lengthscale > 0.0)) {
    throw InvalidArgument("lengthscale must be positive");
  }
  if (!(variance > 0.0)) throw InvalidArgument("variance must be positive");
  if (!(noise_var > 0.0)) throw InvalidArgument("noise_var must be positive");
  if (n_batches < 1) throw InvalidArgument("n_batches must be >= 1");
}

void ExperimentConfig::apply_method_defaults() {
  const ExperimentConfig defaults;
  if (uses_rho(method)) {
    if (!rho) rho = kDefaultRho;
  } else {
    rho.reset();
  }
  if (uses_kmeans(method)) {
    if (!n_inducing) n_inducing = kDefaultInducing;
  } else {
    n_inducing.reset();
    kmeans_iters = defaults.kmeans_iters;
  }
  if (uses_grid(method)) {
    if (!points_per_dim) points_per_dim = kDefaultPointsPerDim;
  } else {
    points_per_dim.reset();
  }
  if (!uses_adam(method)) {
    opt_steps = defaults.opt_steps;
    adam_alpha = defaults.adam_alpha;
  }
}

nlohmann::json ExperimentConfig::to_json() const {
  nlohmann::json j;
  j["method"] = to_string(method);
  if (uses_rho(method) && rho) j["rho"] = *rho;
  if (uses_kmeans(method)) {
    if (n_inducing) j["n_inducing"] = *n_inducing;
    j["kmeans_iters"] = kmeans_iters;
  }
  if (uses_grid(method) && points_per_dim) j["points_per_dim"] = *points_per_dim;
  if (uses_adam(method)) {
    j["opt_steps"] = opt_steps;
    j["adam_alpha"] = adam_alpha;
  }
  j["lengthscale"] = lengthscale ? nlohmann::json(*lengthscale) : nlohmann::json("median");
  j["variance"] = variance;
  j["noise_var"] = noise_var;
  j["n_batches"] = n_batches;
  j["seed"] = seed;
  j["train"] = train_path;
  j["test"] = test_path;
  j["metrics"] = metrics_path;
  j["state"] = state_path;
  return j;
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  static const std::set<std::string> known = {
      "method",  "rho",      "n_inducing", "points_per_dim", "kmeans_iters",
      "lengthscale", "variance", "noise_var", "n_batches", "opt_steps",
      "adam_alpha", "seed",    "train",     "test",          "metrics",
      "state"};
  if (!j.is_object()) throw InvalidArgument("config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw InvalidArgument("config: unknown key '" + key + "'");
  }
  ExperimentConfig c;
  try {
    if (j.contains("method")) c.method = parse_stream_method(j["method"].get<std::string>());
    if (j.contains("rho")) c.rho = j["rho"].get<double>();
    if (j.contains("n_inducing")) c.n_inducing = j["n_inducing"].get<Eigen::Index>();
    if (j.contains("points_per_dim")) c.points_per_dim = j["points_per_dim"].get<Eigen::Index>();
    if (j.contains("kmeans_iters")) c.kmeans_iters = j["kmeans_iters"].get<int>();
    if (j.contains("lengthscale")) {
      const auto& l = j["lengthscale"];
      if (l.is_string()) {
        if (l.get<std::string>() != "median") {
          throw InvalidArgument("config: lengthscale must be a number or \"median\"");
        }
      } else {
        c.lengthscale = l.get<double>();
      }
    }
    if (j.contains("variance")) c.variance = j["variance"].get<double>();
    if (j.contains("noise_var")) c.noise_var = j["noise_var"].get<double>();
    if (j.contains("n_batches")) c.n_batches = j["n_batches"].get<std::size_t>();
    if (j.contains("opt_steps")) c.opt_steps = j["opt_steps"].get<int>();
    if (j.contains("adam_alpha")) c.adam_alpha = j["adam_alpha"].get<double>();
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("train")) c.train_path = j["train"].get<std::string>();
    if (j.contains("test")) c.test_path = j["test"].get<std::string>();
    if (j.contains("metrics")) c.metrics_path = j["metrics"].get<std::string>();
    if (j.contains("state")) c.state_path = j["state"].get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("config: ") + e.what());
  }
  return c;
}

StreamConfig ExperimentConfig::stream_config(double resolved_lengthscale) const {
  validate();
  StreamConfig s;
  s.method = method;
  s.theta = KernelConfig{resolved_lengthscale, variance};
  s.noise_var = noise_var;
  if (rho) s.rho = *rho;
  if (n_inducing) s.n_inducing = *n_inducing;
  s.kmeans_iters = kmeans_iters;
  if (points_per_dim) s.points_per_dim = *points_per_dim;
  s.opt_steps = uses_adam(method) ? opt_steps : 0;
  s.adam.alpha = adam_alpha;
  s.seed = seed;
  return s;
}

double first_batch_lengthscale(const StreamingDataset& data) {
  if (data.batches.empty()) {
    throw InvalidArgument("first_batch_lengthscale: dataset has no batches");
  }
  return median_heuristic(data.batch(0).x);
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Streaming sparse GP regression with online inducing point selection",
               "streamgp"};
  app.require_subcommand(1);

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate toy dataset A, B or C");
  gen_cmd->add_option("--kind", gen.kind, "Dataset kind")
      ->required()
      ->check(CLI::IsMember({"A", "B", "C"}));
  gen_cmd->add_option("--seed", gen.seed, "Generator seed (default $STREAMGP_SEED or 0)");
  gen_cmd->add_option("--n-train", gen.n_train, "Training points")->capture_default_str();
  gen_cmd->add_option("--n-test", gen.n_test, "Test points")->capture_default_str();
  gen_cmd->add_option("--noise-sd", gen.noise_sd, "Observation noise sd")->capture_default_str();
  gen_cmd->add_option("--n-batches", gen.n_batches, "Batches recorded in the sidecar")
      ->capture_default_str();
  gen_cmd->add_option("--out-dir", gen.out_dir, "Output directory")->capture_default_str();

  StreamArgs st;
  StreamOptions so{};
  auto* st_cmd = app.add_subcommand("stream", "Run a streaming experiment");
  st_cmd->add_option("--config", st.config, "JSON config (flags take precedence)");
  st_cmd->add_option("--save-config", st.save_config, "Write the resolved config here");
  so.method = st_cmd->add_option("--method", st.method, "oips | oips-opt | kmeans-opt | grid")
                  ->check(CLI::IsMember({"oips", "oips-opt", "kmeans-opt", "grid"}));
  so.rho = st_cmd->add_option("--rho", st.rho, "OIPS threshold");
  so.n_inducing = st_cmd->add_option("--n-inducing", st.n_inducing, "k-means centers");
  so.points_per_dim = st_cmd->add_option("--points-per-dim", st.points_per_dim, "Grid size");
  so.kmeans_iters = st_cmd->add_option("--kmeans-iters", st.kmeans_iters, "Lloyd iterations");
  so.lengthscale = st_cmd->add_option("--lengthscale", st.lengthscale, "Number or 'median'");
  so.variance = st_cmd->add_option("--variance", st.variance, "Kernel variance");
  so.noise_var = st_cmd->add_option("--noise-var", st.noise_var, "Likelihood variance");
  so.n_batches = st_cmd->add_option("--n-batches", st.n_batches, "Number of batches");
  so.opt_steps = st_cmd->add_option("--opt-steps", st.opt_steps, "ADAM steps per batch");
  so.adam_alpha = st_cmd->add_option("--adam-alpha", st.adam_alpha, "ADAM step size");
  so.seed = st_cmd->add_option("--seed", st.seed, "Seed (default $STREAMGP_SEED or 0)");
  so.train = st_cmd->add_option("--train", st.train, "Training CSV");
  so.test = st_cmd->add_option("--test", st.test, "Test CSV");
  so.metrics = st_cmd->add_option("--metrics", st.metrics, "Metrics CSV output");
  so.state = st_cmd->add_option("--state", st.state, "Final state JSON output");
  st_cmd->add_flag("--timing", st.timing, "Record wall time in elapsed_ms");

  BoundsArgs bd;
  auto* bd_cmd = app.add_subcommand("bounds", "Evaluate the inducing point and residual bounds");
  bd_cmd->add_option("--n", bd.n, "Uniform points to generate")->capture_default_str();
  bd_cmd->add_option("--d", bd.d, "Input dimension")->capture_default_str();
  bd_cmd->add_option("--side", bd.side, "Hypercube side a")->capture_default_str();
  bd_cmd->add_option("--lengthscale", bd.lengthscale)->capture_default_str();
  bd_cmd->add_option("--rho", bd.rho)->capture_default_str();
  bd_cmd->add_option("--seed", bd.seed, "Seed (default $STREAMGP_SEED or 0)");
  bd_cmd->add_option("--data", bd.data, "Dataset CSV instead of uniform data");
  bd_cmd->add_option("--report", bd.report)->capture_default_str();
  bd_cmd->add_option("--curve", bd.curve, "CSV of N, empirical_M, bound_M")
      ->capture_default_str();
  bd_cmd->add_option("--norm-curve", bd.norm_curve, "CSV of N, M, empirical_norm, eq5, eq6")
      ->capture_default_str();
  bd_cmd->add_option("--curve-step", bd.curve_step)->capture_default_str();
  bd_cmd->add_option("--norm-rows", bd.norm_rows)->capture_default_str();

  DppArgs dp;
  auto* dp_cmd = app.add_subcommand("dpp-compare", "k-DPP log-probability of OIPS vs k-DPP sets");
  dp_cmd->add_option("--n", dp.n, "Uniform points to generate")->capture_default_str();
  dp_cmd->add_option("--d", dp.d, "Input dimension")->capture_default_str();
  dp_cmd->add_option("--side", dp.side)->capture_default_str();
  dp_cmd->add_option("--lengthscale", dp.lengthscale)->capture_default_str();
  dp_cmd->add_option("--rho", dp.rho)->capture_default_str();
  dp_cmd->add_option("--replicates", dp.replicates, "Shuffles R")->capture_default_str();
  dp_cmd->add_option("--seed", dp.seed, "Seed (default $STREAMGP_SEED or 0)");
  dp_cmd->add_option("--data", dp.data, "Dataset CSV instead of uniform data");
  auto* k_opt = dp_cmd->add_option("--k", dp.k, "Force the subset size");
  dp_cmd->add_option("--out", dp.out)->capture_default_str();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e, out, err);
    err << "streamgp: " << e.what() << '\n';
    return 2;
  }

  try {
    if (*gen_cmd) return cmd_gen_data(gen, out);
    if (*st_cmd) return cmd_stream(st, so, out);
    if (*bd_cmd) return cmd_bounds(bd, out, err);
    if (*dp_cmd) return cmd_dpp_compare(dp, k_opt, out);
  } catch (const UsageError& e) {
    err << "streamgp: " << e.what() << '\n';
    return 2;
  } catch (const InvalidArgument& e) {
    err << "streamgp: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "streamgp: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace streamgp
