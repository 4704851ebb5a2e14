#include "marac/data_io.hpp"

#include "marac/errors.hpp"
#include "marac/serialization.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <tuple>

namespace marac {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void put_f64(std::string& buf, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof bits);
  for (int b = 0; b < 8; ++b) buf.push_back(static_cast<char>((bits >> (8 * b)) & 0xFF));
}

double get_f64(const char* p) {
  std::uint64_t bits = 0;
  for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[b])) << (8 * b);
  double v;
  std::memcpy(&v, &bits, sizeof v);
  return v;
}

void write_file(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("write failed for " + path.string());
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.filename().string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t manifest_size(const json& m, const char* key) {
  if (!m.contains(key) || !m.at(key).is_number_integer() || m.at(key).get<long long>() < 0) {
    throw FormatError(std::string("manifest.json: field '") + key + "' missing or not a non-negative integer");
  }
  return m.at(key).get<std::size_t>();
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

long long parse_index(const std::string& s, const std::string& file, std::size_t line) {
  try {
    std::size_t used = 0;
    const long long v = std::stoll(s, &used);
    if (used != s.size() || v < 0) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw FormatError(file + " line " + std::to_string(line) + ": bad index '" + s + "'");
  }
}

double parse_value(const std::string& s, const std::string& file, std::size_t line) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw FormatError(file + " line " + std::to_string(line) + ": bad value '" + s + "'");
  }
}

// Rows of `width` columns after a header, each row trimmed of a trailing '\r'.
std::vector<std::vector<std::string>> read_csv(const std::string& path, std::size_t width) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path + ": missing header row");
  std::vector<std::vector<std::string>> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cells = split_csv_line(line);
    if (cells.size() != width) {
      throw FormatError(path + " line " + std::to_string(lineno) + ": expected " + std::to_string(width) + " fields");
    }
    rows.push_back(std::move(cells));
  }
  return rows;
}

}  // namespace

void write_bundle(const MatrixSeries& series, const Split& split, const std::string& dir,
                  const std::optional<json>& grid) {
  series.validate();
  const std::size_t t = series.length();
  if (split.train_end == 0 || split.train_end > split.val_end || split.val_end > t) {
    throw ContractError("write_bundle: split must satisfy 0 < train_end <= val_end <= T");
  }
  const fs::path root(dir);
  fs::create_directories(root);
  if (fs::exists(root / "manifest.json")) throw FormatError("write_bundle: " + dir + " already holds a bundle");
  const int m = series.rows();
  const int n = series.cols();
  const int d = series.aux_dim();
  std::string xbytes;
  xbytes.reserve(t * m * n * 8);
  for (const auto& frame : series.x) {
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < n; ++j) put_f64(xbytes, frame(i, j));
    }
  }
  std::string zbytes;
  zbytes.reserve(t * d * 8);
  for (const auto& z : series.z) {
    for (int k = 0; k < d; ++k) put_f64(zbytes, z(k));
  }
  write_file(root / "x.bin", xbytes);
  write_file(root / "z.bin", zbytes);
  json manifest{{"M", m},
                {"N", n},
                {"T", t},
                {"D", d},
                {"dtype", "f64le"},
                {"layout", "frame-major,row-major"},
                {"grid", grid ? json("grid.json") : json(nullptr)},
                {"split", {{"train_end", split.train_end}, {"val_end", split.val_end}}}};
  if (grid) write_json_file((root / "grid.json").string(), *grid);
  write_json_file((root / "manifest.json").string(), manifest);
}

SeriesBundle read_bundle(const std::string& dir) {
  const fs::path root(dir);
  SeriesBundle out;
  out.manifest = read_json_file((root / "manifest.json").string());
  const json& man = out.manifest;
  const std::size_t m = manifest_size(man, "M");
  const std::size_t n = manifest_size(man, "N");
  const std::size_t t = manifest_size(man, "T");
  const std::size_t d = manifest_size(man, "D");
  if (m == 0 || n == 0 || t == 0) throw FormatError("manifest.json: M, N and T must be positive");
  if (man.value("dtype", "") != "f64le") throw FormatError("manifest.json: field 'dtype' must be \"f64le\"");
  if (man.value("layout", "") != "frame-major,row-major") {
    throw FormatError("manifest.json: field 'layout' must be \"frame-major,row-major\"");
  }
  if (!man.contains("split") || !man.at("split").is_object()) throw FormatError("manifest.json: field 'split' missing");
  out.split.train_end = manifest_size(man.at("split"), "train_end");
  out.split.val_end = manifest_size(man.at("split"), "val_end");
  if (out.split.train_end == 0 || out.split.train_end > out.split.val_end || out.split.val_end > t) {
    throw FormatError("manifest.json: field 'split' must satisfy 0 < train_end <= val_end <= T");
  }

  const std::string xbytes = read_file(root / "x.bin");
  if (xbytes.size() != t * m * n * 8) {
    throw FormatError("x.bin: expected " + std::to_string(t * m * n * 8) + " bytes, found " +
                      std::to_string(xbytes.size()));
  }
  const std::string zbytes = d > 0 || fs::exists(root / "z.bin") ? read_file(root / "z.bin") : std::string();
  if (zbytes.size() != t * d * 8) {
    throw FormatError("z.bin: expected " + std::to_string(t * d * 8) + " bytes, found " +
                      std::to_string(zbytes.size()));
  }
  const char* px = xbytes.data();
  const char* pz = zbytes.data();
  for (std::size_t k = 0; k < t; ++k) {
    Mat frame(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j, px += 8) {
        frame(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = get_f64(px);
      }
    }
    Vec z(static_cast<Eigen::Index>(d));
    for (std::size_t c = 0; c < d; ++c, pz += 8) z(static_cast<Eigen::Index>(c)) = get_f64(pz);
    out.series.x.push_back(std::move(frame));
    out.series.z.push_back(std::move(z));
  }
  if (man.contains("grid") && man.at("grid").is_string()) {
    out.grid = read_json_file((root / man.at("grid").get<std::string>()).string());
  } else if (fs::exists(root / "grid.json")) {
    out.grid = read_json_file((root / "grid.json").string());
  }
  return out;
}

MatrixSeries ingest_csv(const std::string& x_csv, const std::string& z_csv) {
  std::map<std::tuple<long long, long long, long long>, double> cells;
  long long tmax = -1, imax = -1, jmax = -1;
  std::size_t lineno = 1;
  for (const auto& row : read_csv(x_csv, 4)) {
    ++lineno;
    const auto t = parse_index(row[0], x_csv, lineno);
    const auto i = parse_index(row[1], x_csv, lineno);
    const auto j = parse_index(row[2], x_csv, lineno);
    if (!cells.emplace(std::make_tuple(t, i, j), parse_value(row[3], x_csv, lineno)).second) {
      throw FormatError(x_csv + ": duplicate cell (t=" + row[0] + ", i=" + row[1] + ", j=" + row[2] + ")");
    }
    tmax = std::max(tmax, t);
    imax = std::max(imax, i);
    jmax = std::max(jmax, j);
  }
  if (cells.empty()) throw FormatError(x_csv + ": no data rows");
  MatrixSeries out;
  for (long long t = 0; t <= tmax; ++t) {
    Mat frame(imax + 1, jmax + 1);
    for (long long i = 0; i <= imax; ++i) {
      for (long long j = 0; j <= jmax; ++j) {
        auto it = cells.find({t, i, j});
        if (it == cells.end()) {
          throw FormatError(x_csv + ": missing cell (t=" + std::to_string(t) + ", i=" + std::to_string(i) +
                            ", j=" + std::to_string(j) + ")");
        }
        frame(i, j) = it->second;
      }
    }
    out.x.push_back(std::move(frame));
  }

  std::map<std::pair<long long, long long>, double> zcells;
  long long dmax = -1;
  if (!z_csv.empty()) {
    lineno = 1;
    for (const auto& row : read_csv(z_csv, 3)) {
      ++lineno;
      const auto t = parse_index(row[0], z_csv, lineno);
      const auto d = parse_index(row[1], z_csv, lineno);
      if (t > tmax) throw FormatError(z_csv + ": frame " + row[0] + " is beyond the matrix series");
      if (!zcells.emplace(std::make_pair(t, d), parse_value(row[2], z_csv, lineno)).second) {
        throw FormatError(z_csv + ": duplicate cell (t=" + row[0] + ", d=" + row[1] + ")");
      }
      dmax = std::max(dmax, d);
    }
  }
  for (long long t = 0; t <= tmax; ++t) {
    Vec z(dmax + 1);
    for (long long d = 0; d <= dmax; ++d) {
      auto it = zcells.find({t, d});
      if (it == zcells.end()) {
        throw FormatError(z_csv + ": missing cell (t=" + std::to_string(t) + ", d=" + std::to_string(d) + ")");
      }
      z(d) = it->second;
    }
    out.z.push_back(std::move(z));
  }
  out.validate();
  return out;
}

std::pair<MatrixSeries, Centering> center_by_train_mean(const MatrixSeries& series, const Split& split) {
  if (split.train_end == 0 || split.train_end > series.length()) {
    throw ContractError("center_by_train_mean: empty training window");
  }
  Centering c;
  c.x_mean = Mat::Zero(series.rows(), series.cols());
  c.z_mean = Vec::Zero(series.aux_dim());
  for (std::size_t t = 0; t < split.train_end; ++t) {
    c.x_mean += series.x[t];
    c.z_mean += series.z[t];
  }
  c.x_mean /= static_cast<double>(split.train_end);
  c.z_mean /= static_cast<double>(split.train_end);
  MatrixSeries out = series;
  for (auto& x : out.x) x -= c.x_mean;
  for (auto& z : out.z) z -= c.z_mean;
  return {std::move(out), std::move(c)};
}

Mat decenter(const Mat& forecast, const Centering& c) { return forecast + c.x_mean; }

}  // namespace marac
