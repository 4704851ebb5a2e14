#include "commands.hpp"
#include "marac/baselines.hpp"
#include "marac/serialization.hpp"
#include "marac/stationarity.hpp"
#include "marac/version.hpp"
#include "marac/data_io.hpp"
#include "support.hpp"

#include <doctest.h>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

using namespace marac;
using marac::testing::random_matrix;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("marac_cli_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& name) const { return (path / name).string(); }
  static inline int counter = 0;
};

// Runs the command line in-process with stdout captured.
int run(const std::vector<std::string>& args, std::string* captured = nullptr) {
  std::ostringstream sink;
  std::streambuf* saved = std::cout.rdbuf(sink.rdbuf());
  const int rc = cli::run_cli(args);
  std::cout.rdbuf(saved);
  if (captured) *captured = sink.str();
  return rc;
}

void write_config(const std::string& path, const json& j) { std::ofstream(path) << j.dump(); }

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<std::vector<std::string>> read_csv(const std::string& path) {
  std::vector<std::vector<std::string>> rows;
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, ',')) cells.push_back(c);
    rows.push_back(cells);
  }
  return rows;
}

double metric(const std::string& csv, const std::string& method, int h, const std::string& split) {
  for (const auto& r : read_csv(csv)) {
    if (r.size() >= 4 && r[0] == method && r[1] == std::to_string(h) && r[2] == split) return std::stod(r[3]);
  }
  return std::nan("");
}

std::string small_data(const TempDir& tmp, const json& overrides = json::object(), const std::string& name = "data") {
  json cfg{{"M", 4}, {"N", 4}, {"D", 2}, {"P", 1}, {"Q", 1}, {"T_train", 400}, {"T_val", 100}, {"T_test", 100}};
  cfg.update(overrides);
  write_config(tmp / (name + ".json"), cfg);
  REQUIRE(run({"simulate", "--config", tmp / (name + ".json"), "--seed", "5", "--out", tmp / name}) == 0);
  return tmp / name;
}

}  // namespace

TEST_CASE("simulate writes a bundle, truth and provenance, deterministically") {
  TempDir tmp;
  write_config(tmp / "sim.json", {{"M", 5}, {"N", 5}, {"T_train", 2000}, {"T_val", 500}, {"T_test", 500}});
  REQUIRE(run({"simulate", "--config", tmp / "sim.json", "--seed", "11", "--out", tmp / "a"}) == 0);
  REQUIRE(run({"simulate", "--config", tmp / "sim.json", "--seed", "11", "--out", tmp / "b"}) == 0);
  const json man = read_json_file(tmp / "a/manifest.json");
  CHECK(man.at("T") == 3000);
  CHECK(man.at("split").at("train_end") == 2000);
  CHECK(man.at("split").at("val_end") == 2500);
  CHECK(fs::exists(tmp / "a/truth.json"));
  const std::string xa = slurp(tmp / "a/x.bin");
  CHECK(xa.size() == 3000u * 25u * 8u);
  CHECK(xa == slurp(tmp / "b/x.bin"));
  const json prov = read_json_file(tmp / "a/provenance.json");
  CHECK(prov.at("seed") == 11);
  CHECK(prov.at("version") == kVersion);
  REQUIRE(run({"simulate", "--config", tmp / "sim.json", "--seed", "12", "--out", tmp / "c"}) == 0);
  CHECK(xa != slurp(tmp / "c/x.bin"));
}

TEST_CASE("non-stationary simulation exits with the stationarity code") {
  TempDir tmp;
  write_config(tmp / "bad.json", {{"M", 3}, {"N", 3}, {"target_radius", 1.2}});
  CHECK(run({"simulate", "--config", tmp / "bad.json", "--out", tmp / "x"}) == cli::kNonStationary);
  CHECK_FALSE(fs::exists(tmp / "x"));
  write_config(tmp / "bad2.json", {{"M", 3}, {"N", 3}, {"aux_coef", 1.1}});
  CHECK(run({"simulate", "--config", tmp / "bad2.json", "--out", tmp / "y"}) == cli::kNonStationary);
}

TEST_CASE("fit writes a non-increasing trace and signals non-convergence") {
  TempDir tmp;
  const std::string data = small_data(tmp);
  REQUIRE(run({"fit", "--data", data, "--lags", "1,1", "--lambda", "0.01", "--out", tmp / "fit"}) == cli::kOk);
  const auto rows = read_csv(tmp / "fit/trace.csv");
  REQUIRE(rows.size() > 2);
  CHECK(rows[0][1] == "objective");
  for (std::size_t i = 2; i < rows.size(); ++i) CHECK(std::stod(rows[i][1]) <= std::stod(rows[i - 1][1]) + 1e-9);
  const json report = read_json_file(tmp / "fit/fit_report.json");
  CHECK(report.at("converged") == true);
  const MaracModel m = model_from_json(read_json_file(tmp / "fit/model.json"));
  CHECK(m.P == 1);
  CHECK(m.Q == 1);

  write_config(tmp / "short.json", {{"fit", {{"max_iters", 1}, {"rel_tol", 1e-12}}}});
  CHECK(run({"fit", "--data", data, "--config", tmp / "short.json", "--out", tmp / "fit2"}) == cli::kNotConverged);
  CHECK(fs::exists(tmp / "fit2/model.json"));
}

TEST_CASE("truncated fitting beats exact fitting on wall clock at R = 121 on an 8x8 sphere") {
  TempDir tmp;
  // Ten covariates, so the auxiliary block (where truncation saves work) carries the cost.
  const std::string data = small_data(
      tmp, {{"M", 8}, {"N", 8}, {"D", 10}, {"T_train", 1500}, {"grid", {{"kind", "sphere_latlon"}, {"kernel", {{"family", "lebedev"}, {"eta", 3.0}}}}}});
  auto timed = [&](const std::vector<std::string>& extra, const std::string& out) {
    std::vector<std::string> args{"fit", "--data", data, "--lags", "1,1", "--lambda", "0.001", "--out", tmp / out};
    args.insert(args.end(), extra.begin(), extra.end());
    const auto t0 = std::chrono::steady_clock::now();
    const int rc = run(args);
    CHECK(rc == cli::kOk);
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };
  const double exact = timed({}, "exact");
  const double trunc = timed({"--mode", "truncated:121"}, "trunc");
  MESSAGE("exact " << exact << " s, truncated:121 " << trunc << " s");
  CHECK(trunc < exact);
}

TEST_CASE("tune-lambda and predict") {
  TempDir tmp;
  const std::string data = small_data(tmp);
  REQUIRE(run({"tune-lambda", "--data", data, "--lambdas", "1e-3,1e-2,1e-1", "--out", tmp / "tune"}) == 0);
  const json best = read_json_file(tmp / "tune/best.json");
  CHECK(best.at("best_lambda").get<double>() > 0.0);
  CHECK(read_csv(tmp / "tune/lambda.csv").size() == 4);
  REQUIRE(run({"predict", "--data", data, "--model", tmp / "tune/model.json", "--split", "test", "--out", tmp / "pred"}) == 0);
  const double r = metric(tmp / "pred/metrics.csv", "marac", 1, "test");
  CHECK(std::isfinite(r));
  CHECK(r < 1.5);
}

TEST_CASE("benchmark metrics") {
  TempDir tmp;
  const std::string data = small_data(tmp);
  const std::string metrics = tmp / "all.csv";
  REQUIRE(run({"benchmark", "--data", data, "--methods", "marac,mar", "--lambdas", "1e-3,1e-2", "--metrics", metrics,
               "--out", tmp / "b1"}) == 0);
  const double marac = metric(tmp / "b1/metrics.csv", "marac", 1, "test");
  const double mar = metric(tmp / "b1/metrics.csv", "mar", 1, "test");
  CHECK(marac < mar);
  CHECK(read_csv(tmp / "b1/metrics.csv")[0].size() == 5);
  CHECK(slurp(tmp / "b1/metrics.csv").rfind(cli::kMetricsHeader, 0) == 0);
  REQUIRE(run({"benchmark", "--data", data, "--methods", "persistence", "--latency", "1,2", "--metrics", metrics,
               "--out", tmp / "b2"}) == 0);
  const auto rows = read_csv(metrics);
  int headers = 0;
  for (const auto& r : rows) headers += r[0] == "method";
  CHECK(headers == 1);
  CHECK(rows.size() == 1 + 4 + 4);

  CHECK(run({"benchmark", "--data", data, "--methods", "", "--out", tmp / "b3"}) == cli::kUsage);
  CHECK(run({"benchmark", "--data", data, "--methods", "marac,oracle", "--out", tmp / "b4"}) == cli::kUsage);
  std::ofstream(tmp / "wrong.csv") << "a,b,c\n";
  CHECK(run({"benchmark", "--data", data, "--methods", "persistence", "--metrics", tmp / "wrong.csv", "--out",
             tmp / "b5"}) != cli::kOk);
}

TEST_CASE("persistence on white noise has RMSE sqrt(2) sigma") {
  TempDir tmp;
  Rng rng = make_rng(21, 0);
  MatrixSeries s;
  const double sigma = 0.7;
  for (int t = 0; t < 4000; ++t) {
    s.x.push_back(sigma * random_matrix(3, 3, rng));
    s.z.push_back(random_matrix(1, 1, rng));
  }
  write_bundle(s, {2000, 2000}, tmp / "noise");
  REQUIRE(run({"benchmark", "--data", tmp / "noise", "--methods", "persistence", "--out", tmp / "b"}) == 0);
  CHECK(metric(tmp / "b/metrics.csv", "persistence", 1, "test") == doctest::Approx(std::sqrt(2.0) * sigma).epsilon(0.03));
}

TEST_CASE("select-lags outputs") {
  TempDir tmp;
  const std::string data = small_data(tmp);
  REQUIRE(run({"select-lags", "--data", data, "--pmin", "1", "--pmax", "1", "--qmin", "1", "--qmax", "1", "--lambda",
               "0.01", "--out", tmp / "one"}) == 0);
  const json chosen = read_json_file(tmp / "one/chosen.json");
  CHECK(chosen.at("bic").at("P") == 1);
  CHECK(chosen.at("bic").at("Q") == 1);
  REQUIRE(run({"select-lags", "--data", data, "--pmax", "2", "--qmax", "0", "--lambda", "0.01", "--out", tmp / "mar"}) == 0);
  const auto rows = read_csv(tmp / "mar/selection.csv");
  CHECK(rows.size() == 4);
  for (std::size_t i = 1; i < rows.size(); ++i) CHECK(rows[i][1] == "0");
}

TEST_CASE("stationarity verdicts") {
  TempDir tmp;
  MaracModel m;
  m.P = 1;
  m.A = {0.5 * Mat::Identity(2, 2)};
  m.B = {0.5 * Mat::Identity(3, 3)};
  m.sigma_r = Mat::Identity(2, 2);
  m.sigma_c = Mat::Identity(3, 3);
  write_json_file(tmp / "stable.json", model_to_json(m));
  CHECK(run({"stationarity", "--model", tmp / "stable.json"}) == cli::kOk);
  m.A = {1.2 * Mat::Identity(2, 2)};
  m.B = {Mat::Identity(3, 3)};
  write_json_file(tmp / "unstable.json", model_to_json(m));
  CHECK(run({"stationarity", "--model", tmp / "unstable.json", "--out", tmp / "v"}) == cli::kNonStationary);
  CHECK(read_json_file(tmp / "v/verdict.json").at("marac_radius").get<double>() == doctest::Approx(1.2));

  const std::string data = small_data(tmp, {{"P", 2}});
  REQUIRE(run({"stationarity", "--model", data + "/truth.json", "--out", tmp / "t"}) == cli::kOk);
  const MaracModel truth = model_from_json(read_json_file(data + "/truth.json"));
  std::vector<std::pair<Mat, Mat>> ab;
  for (int p = 0; p < truth.P; ++p) ab.emplace_back(truth.A[p], truth.B[p]);
  CHECK(read_json_file(tmp / "t/verdict.json").at("marac_radius").get<double>() ==
        doctest::Approx(check_stationarity(ab, {}).marac_radius).epsilon(1e-12));
}

TEST_CASE("usage and data errors map to exit codes") {
  TempDir tmp;
  CHECK(run({}) == cli::kUsage);
  CHECK(run({"bogus"}) == cli::kUsage);
  CHECK(run({"fit"}) == cli::kUsage);
  fs::create_directories(tmp.path / "empty");
  CHECK(run({"fit", "--data", tmp / "empty", "--out", tmp / "o"}) == cli::kDataError);
  const std::string data = small_data(tmp);
  CHECK(run({"fit", "--data", data, "--mode", "fuzzy", "--out", tmp / "o2"}) == cli::kUsage);
  CHECK(run({"fit", "--data", data, "--lags", "1", "--out", tmp / "o3"}) == cli::kUsage);
}

TEST_CASE("installed binary reports exit codes") {
  const std::string bin = MARAC_BINARY;
  CHECK(std::system((bin + " --version > /dev/null").c_str()) == 0);
  const int rc = std::system((bin + " fit > /dev/null 2>&1").c_str());
  CHECK(WEXITSTATUS(rc) == cli::kUsage);
}
