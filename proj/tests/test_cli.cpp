#include "doctest.h"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "streamgp/bounds.hpp"
#include "streamgp/cli.hpp"
#include "streamgp/csv.hpp"

using namespace streamgp;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = 0;
  std::string out;
  std::string err;
};

Run cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  Run r;
  r.code = run_cli(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

/// Fresh directory under the system temp dir, removed on destruction.
struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name)
      : path(fs::temp_directory_path() / ("streamgp_cli_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& f) const { return (path / f).string(); }
};

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream s(line);
  std::string field;
  while (std::getline(s, field, ',')) out.push_back(field);
  return out;
}

std::vector<std::vector<std::string>> read_rows(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) rows.push_back(split(line));
  return rows;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("exit codes") {
  CHECK(cli({}).code == 2);
  CHECK(cli({"frobnicate"}).code == 2);
  CHECK(cli({"--help"}).code == 0);
  TempDir dir("codes");
  const Run bad = cli({"gen-data", "--kind", "D", "--out-dir", dir.path.string()});
  CHECK(bad.code == 2);
  CHECK(bad.err.find("D") != std::string::npos);
  CHECK(std::count(bad.err.begin(), bad.err.end(), '\n') == 1);
  CHECK(cli({"gen-data", "--out-dir", dir.path.string()}).code == 2);
  CHECK(cli({"gen-data", "--kind", "A", "--seed", "x1", "--out-dir", dir.path.string()}).code == 2);
  CHECK(cli({"stream", "--train", dir / "missing.csv", "--test", dir / "missing.csv",
             "--metrics", dir / "m.csv", "--state", dir / "s.json"})
            .code == 1);
  CHECK(cli({"bounds", "--rho", "1.5", "--report", dir / "r.json", "--curve", dir / "c.csv",
             "--norm-curve", dir / "n.csv"})
            .code == 2);
}

TEST_CASE("gen-data is deterministic") {
  TempDir a("gen_a"), b("gen_b");
  REQUIRE(cli({"gen-data", "--kind", "A", "--seed", "1", "--out-dir", a.path.string()}).code == 0);
  REQUIRE(cli({"gen-data", "--kind", "A", "--seed", "1", "--out-dir", b.path.string()}).code == 0);
  for (const char* f : {"train.csv", "test.csv", "dataset.json"}) {
    CHECK(slurp(a.path / f) == slurp(b.path / f));
    CHECK_FALSE(slurp(a.path / f).empty());
  }
}

TEST_CASE("gen-data C has three input columns") {
  TempDir dir("gen_c");
  REQUIRE(cli({"gen-data", "--kind", "C", "--n-train", "200", "--n-test", "200", "--out-dir",
               dir.path.string()})
              .code == 0);
  const auto t = read_numeric_csv(dir.path / "train.csv");
  CHECK(t.header == std::vector<std::string>{"x1", "x2", "x3", "y"});
  CHECK(t.values.rows() == 200);
}

TEST_CASE("STREAMGP_SEED is the default seed") {
  TempDir a("env_a"), b("env_b"), c("env_c");
  REQUIRE(cli({"gen-data", "--kind", "B", "--seed", "17", "--out-dir", a.path.string()}).code == 0);
  ::setenv("STREAMGP_SEED", "17", 1);
  const int code = cli({"gen-data", "--kind", "B", "--out-dir", b.path.string()}).code;
  ::unsetenv("STREAMGP_SEED");
  REQUIRE(code == 0);
  REQUIRE(cli({"gen-data", "--kind", "B", "--out-dir", c.path.string()}).code == 0);
  CHECK(slurp(a.path / "train.csv") == slurp(b.path / "train.csv"));
  CHECK(slurp(a.path / "train.csv") != slurp(c.path / "train.csv"));
}

TEST_CASE("stream runs and is bitwise reproducible") {
  TempDir dir("stream");
  REQUIRE(cli({"gen-data", "--kind", "A", "--seed", "1", "--out-dir", dir.path.string()}).code == 0);
  const std::vector<std::string> base{"stream", "--train", dir / "train.csv", "--test",
                                      dir / "test.csv"};

  auto run = [&](std::vector<std::string> extra, const std::string& tag) {
    std::vector<std::string> args = base;
    args.insert(args.end(), extra.begin(), extra.end());
    args.insert(args.end(), {"--metrics", dir / (tag + ".csv"), "--state", dir / (tag + ".json")});
    return cli(args);
  };

  const Run oips = run({"--method", "oips"}, "oips");
  REQUIRE(oips.code == 0);
  CHECK(oips.out.find("final M = ") != std::string::npos);
  const auto rows = read_rows(dir / "oips.csv");
  REQUIRE(rows.size() == 5);
  CHECK(rows[0] == std::vector<std::string>{"batch_index", "n_seen", "M", "elbo", "test_nll",
                                            "test_rmse", "elapsed_ms"});
  const int m = std::stoi(rows[4][2]);
  CHECK(m >= 12);
  CHECK(m <= 30);

  REQUIRE(run({"--method", "oips"}, "oips2").code == 0);
  CHECK(slurp(dir / "oips.csv") == slurp(dir / "oips2.csv"));
  CHECK(slurp(dir / "oips.json") == slurp(dir / "oips2.json"));

  REQUIRE(run({"--method", "grid", "--points-per-dim", "5"}, "grid").code == 0);
  const auto grid = read_rows(dir / "grid.csv");
  REQUIRE(grid.size() == 5);
  for (std::size_t i = 1; i < grid.size(); ++i) CHECK(grid[i][2] == "5");

  REQUIRE(run({"--method", "kmeans-opt", "--n-inducing", "6", "--opt-steps", "2", "--seed", "3"},
              "km")
              .code == 0);
  REQUIRE(run({"--method", "kmeans-opt", "--n-inducing", "6", "--opt-steps", "2", "--seed", "3"},
              "km2")
              .code == 0);
  CHECK(slurp(dir / "km.csv") == slurp(dir / "km2.csv"));

  const Run timed = run({"--method", "oips", "--timing"}, "timed");
  REQUIRE(timed.code == 0);
  CHECK(read_rows(dir / "timed.csv")[1][6] != "NA");
  CHECK(rows[1][6] == "NA");

  CHECK(run({"--method", "sgd"}, "bad").code == 2);
  CHECK(run({"--lengthscale", "-1"}, "bad").code == 2);
}

TEST_CASE("stream config round trip and precedence") {
  TempDir dir("config");
  REQUIRE(cli({"gen-data", "--kind", "A", "--seed", "2", "--n-train", "80", "--n-test", "40",
               "--out-dir", dir.path.string()})
              .code == 0);
  const std::vector<std::string> io{"--train", dir / "train.csv", "--test", dir / "test.csv",
                                    "--metrics", dir / "m.csv", "--state", dir / "s.json"};
  std::vector<std::string> args{"stream", "--method", "oips", "--rho", "0.7", "--n-batches", "2",
                                "--save-config", dir / "cfg.json"};
  args.insert(args.end(), io.begin(), io.end());
  REQUIRE(cli(args).code == 0);

  std::ifstream in(dir / "cfg.json");
  const auto j = nlohmann::json::parse(in);
  const auto cfg = ExperimentConfig::from_json(j);
  CHECK(cfg.method == StreamMethod::oips);
  CHECK(cfg.rho == 0.7);
  CHECK(cfg.n_batches == 2);
  CHECK_FALSE(cfg.n_inducing.has_value());
  CHECK(ExperimentConfig::from_json(cfg.to_json()) == cfg);
  CHECK(cfg.to_json() == j);

  // Flags override the file; the file overrides defaults.
  std::vector<std::string> again{"stream", "--config", dir / "cfg.json", "--rho", "0.8",
                                 "--save-config", dir / "cfg2.json"};
  again.insert(again.end(), io.begin(), io.end());
  REQUIRE(cli(again).code == 0);
  std::ifstream in2(dir / "cfg2.json");
  const auto cfg2 = ExperimentConfig::from_json(nlohmann::json::parse(in2));
  CHECK(cfg2.rho == 0.8);
  CHECK(cfg2.n_batches == 2);

  auto bad = j;
  bad["colour"] = "blue";
  CHECK_THROWS(ExperimentConfig::from_json(bad));

  ExperimentConfig grid;
  grid.method = StreamMethod::grid;
  CHECK_THROWS(grid.validate());
  grid.apply_method_defaults();
  CHECK(grid.points_per_dim == kDefaultPointsPerDim);
  CHECK_FALSE(grid.rho.has_value());
  CHECK_NOTHROW(grid.validate());
  CHECK_FALSE(grid.to_json().contains("rho"));
}

TEST_CASE("bounds command") {
  TempDir dir("bounds");
  const std::vector<std::string> args{"bounds",       "--n",          "400",
                                      "--d",          "3",            "--rho",
                                      "0.7",          "--lengthscale", "0.3",
                                      "--seed",       "5",            "--report",
                                      dir / "r.json", "--curve",      dir / "c.csv",
                                      "--norm-curve", dir / "n.csv"};
  const Run r = cli(args);
  REQUIRE(r.code == 0);
  const auto curve = read_rows(dir / "c.csv");
  REQUIRE(curve.size() > 10);
  CHECK(curve[0] == std::vector<std::string>{"N", "empirical_M", "bound_M"});
  for (std::size_t i = 1; i < curve.size(); ++i) {
    CHECK(std::stod(curve[i][1]) <= std::stod(curve[i][2]));
  }
  const auto norm = read_rows(dir / "n.csv");
  CHECK(norm[0] == std::vector<std::string>{"N", "M", "empirical_norm", "eq5", "eq6"});
  for (std::size_t i = 1; i < norm.size(); ++i) {
    CHECK(std::stod(norm[i][2]) <= std::stod(norm[i][4]) * (1.0 + 1e-12) + 1e-6);
  }

  std::ifstream in(dir / "r.json");
  const auto report = BoundReport::from_json(nlohmann::json::parse(in));
  CHECK(report.n == 400);
  CHECK(report.holds);

  const std::string before = slurp(dir / "r.json");
  REQUIRE(cli(args).code == 0);
  CHECK(slurp(dir / "r.json") == before);

  const Run tiny = cli({"bounds", "--n", "10", "--rho", "0.99", "--report", dir / "t.json",
                        "--curve", dir / "tc.csv", "--norm-curve", dir / "tn.csv"});
  REQUIRE(tiny.code == 0);
  std::ifstream tin(dir / "t.json");
  const auto t = BoundReport::from_json(nlohmann::json::parse(tin));
  CHECK(t.m >= 9);
}

TEST_CASE("dpp-compare command") {
  TempDir dir("dpp");
  const Run r = cli({"dpp-compare", "--n", "60", "--replicates", "5", "--seed", "3", "--out",
                     dir / "d.csv"});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("median") != std::string::npos);
  const auto rows = read_rows(dir / "d.csv");
  REQUIRE(rows.size() == 11);
  CHECK(rows[0] == std::vector<std::string>{"replicate", "method", "k", "log_prob"});

  const std::string first = slurp(dir / "d.csv");
  REQUIRE(cli({"dpp-compare", "--n", "60", "--replicates", "5", "--seed", "3", "--out",
               dir / "d.csv"})
              .code == 0);
  CHECK(slurp(dir / "d.csv") == first);

  REQUIRE(cli({"dpp-compare", "--n", "12", "--replicates", "3", "--k", "12", "--out",
               dir / "full.csv"})
              .code == 0);
  const auto full = read_rows(dir / "full.csv");
  REQUIRE(full.size() == 7);
  for (std::size_t i = 1; i < full.size(); i += 2) {
    CHECK(full[i][2] == "12");
    CHECK(full[i][3] == full[i + 1][3]);
  }
}

}  // TEST_SUITE
