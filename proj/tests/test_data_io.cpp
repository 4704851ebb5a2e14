#include "marac/data_io.hpp"
#include "marac/errors.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <functional>
#include <fstream>

using namespace marac;
using marac::testing::random_matrix;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("marac_io_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  static inline int counter = 0;
};

MatrixSeries random_series(int m, int n, int d, std::size_t t, std::uint64_t seed) {
  Rng rng = make_rng(seed, 0);
  MatrixSeries s;
  for (std::size_t k = 0; k < t; ++k) {
    s.x.push_back(random_matrix(m, n, rng));
    s.z.push_back(random_matrix(d, 1, rng));
  }
  return s;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const FormatError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("bundle round trip is bit-identical") {
  TempDir tmp;
  const MatrixSeries s = random_series(3, 4, 2, 7, 1);
  const std::string dir = (tmp.path / "b").string();
  write_bundle(s, {4, 6}, dir);
  const SeriesBundle r = read_bundle(dir);
  REQUIRE(r.series.length() == 7);
  for (std::size_t t = 0; t < 7; ++t) {
    CHECK(std::memcmp(r.series.x[t].data(), s.x[t].data(), 12 * sizeof(double)) == 0);
    CHECK(r.series.z[t] == s.z[t]);
  }
  CHECK(r.split.train_end == 4);
  CHECK(r.split.val_end == 6);
  CHECK(r.manifest.at("dtype") == "f64le");
  CHECK_THROWS_AS(write_bundle(s, {4, 6}, dir), FormatError);
}

TEST_CASE("binary layout is little-endian frame-major row-major") {
  TempDir tmp;
  MatrixSeries s;
  Mat x(2, 2);
  x << 1.0, 2.0, 3.0, 4.0;
  s.x = {x};
  s.z = {Vec::Zero(0)};
  const std::string dir = (tmp.path / "b").string();
  write_bundle(s, {1, 1}, dir);
  std::ifstream in(tmp.path / "b" / "x.bin", std::ios::binary);
  unsigned char bytes[32];
  in.read(reinterpret_cast<char*>(bytes), 32);
  const unsigned char one[8] = {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0xF0, 0x3F};
  CHECK(std::memcmp(bytes, one, 8) == 0);
  double second = 0.0;
  std::memcpy(&second, bytes + 8, 8);
  CHECK(second == 2.0);  // (0, 1) follows (0, 0)
  CHECK(fs::file_size(tmp.path / "b" / "z.bin") == 0);
}

TEST_CASE("corrupt bundles name the offending file or field") {
  TempDir tmp;
  const MatrixSeries s = random_series(2, 2, 1, 5, 2);
  const fs::path dir = tmp.path / "b";
  write_bundle(s, {3, 4}, dir.string());
  fs::resize_file(dir / "x.bin", fs::file_size(dir / "x.bin") - 8);
  CHECK(error_of([&] { read_bundle(dir.string()); }).find("x.bin") != std::string::npos);

  const fs::path dir2 = tmp.path / "c";
  write_bundle(s, {3, 4}, dir2.string());
  fs::resize_file(dir2 / "z.bin", 3);
  CHECK(error_of([&] { read_bundle(dir2.string()); }).find("z.bin") != std::string::npos);

  const fs::path dir3 = tmp.path / "d";
  write_bundle(s, {3, 4}, dir3.string());
  nlohmann::json man;
  std::ifstream(dir3 / "manifest.json") >> man;
  man["split"]["val_end"] = 9;
  std::ofstream(dir3 / "manifest.json") << man.dump();
  CHECK(error_of([&] { read_bundle(dir3.string()); }).find("split") != std::string::npos);
  man["split"]["val_end"] = 4;
  man.erase("M");
  std::ofstream(dir3 / "manifest.json") << man.dump();
  CHECK(error_of([&] { read_bundle(dir3.string()); }).find("'M'") != std::string::npos);
}

TEST_CASE("CSV ingestion") {
  TempDir tmp;
  const fs::path x = tmp.path / "x.csv";
  const fs::path z = tmp.path / "z.csv";
  write_text(x, "t,i,j,value\n0,0,0,1.5\n1,0,0,-2\n");
  const MatrixSeries toy = ingest_csv(x.string());
  REQUIRE(toy.length() == 2);
  CHECK(toy.x[1](0, 0) == -2.0);
  CHECK(toy.aux_dim() == 0);

  write_text(x, "t,i,j,value\n0,0,0,1\n0,1,0,2\n0,0,1,3\n0,1,1,4\n1,0,0,5\n1,1,0,6\n1,0,1,7\n1,1,1,8\n");
  write_text(z, "t,d,value\n0,0,0.5\n1,0,-0.5\n");
  const MatrixSeries a = ingest_csv(x.string(), z.string());
  write_text(x, "t,i,j,value\n1,1,1,8\n0,0,1,3\n1,0,0,5\n0,1,0,2\n1,0,1,7\n0,0,0,1\n1,1,0,6\n0,1,1,4\n");
  write_text(z, "t,d,value\n1,0,-0.5\n0,0,0.5\n");
  const MatrixSeries b = ingest_csv(x.string(), z.string());
  for (std::size_t t = 0; t < 2; ++t) {
    CHECK(a.x[t] == b.x[t]);
    CHECK(a.z[t] == b.z[t]);
  }
  CHECK(a.x[0](1, 0) == 2.0);
  CHECK(a.x[0](0, 1) == 3.0);

  write_text(x, "t,i,j,value\n0,0,0,1\n0,1,0,2\n0,0,1,3\n0,1,1,4\n1,0,0,5\n1,0,1,7\n1,1,1,8\n");
  CHECK(error_of([&] { ingest_csv(x.string()); }).find("(t=1, i=1, j=0)") != std::string::npos);
  write_text(x, "t,i,j,value\n0,0,0,1\n0,0,0,2\n");
  CHECK(error_of([&] { ingest_csv(x.string()); }).find("duplicate") != std::string::npos);
  write_text(x, "t,i,j,value\n0,0,0,abc\n");
  CHECK(error_of([&] { ingest_csv(x.string()); }).find("bad value") != std::string::npos);
}

TEST_CASE("centering uses training means only") {
  MatrixSeries s;
  for (int t = 0; t < 10; ++t) {
    s.x.push_back(Mat::Constant(2, 3, t < 6 ? 1.0 : 5.0));
    s.z.push_back(Vec::Constant(2, t < 6 ? -2.0 : 4.0));
  }
  const auto [c, means] = center_by_train_mean(s, {6, 8});
  CHECK(means.x_mean == Mat::Constant(2, 3, 1.0));
  CHECK(means.z_mean == Vec::Constant(2, -2.0));
  CHECK(c.x[0].norm() == 0.0);
  CHECK(c.x[7] == Mat::Constant(2, 3, 4.0));
  CHECK(c.z[9] == Vec::Constant(2, 6.0));
  CHECK(decenter(c.x[7], means) == s.x[7]);

  const MatrixSeries r = random_series(2, 2, 1, 20, 3);
  const auto [rc, rm] = center_by_train_mean(r, {20, 20});
  const auto [again, zero] = center_by_train_mean(rc, {20, 20});
  CHECK(zero.x_mean.norm() <= 1e-12);
  for (std::size_t t = 0; t < 20; ++t) {
    CHECK((again.x[t] - rc.x[t]).norm() <= 1e-12);
    CHECK((decenter(rc.x[t], rm) - r.x[t]).norm() <= 1e-12);
  }
  CHECK_THROWS(center_by_train_mean(r, {0, 5}));
}
