#include "marac/serialization.hpp"

#include "marac/errors.hpp"

#include <fstream>

namespace marac {

using nlohmann::json;

json matrix_to_json(const Mat& m) {
  if (!m.allFinite()) throw ContractError("matrix_to_json: non-finite entry");
  return json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::vector<double>(m.data(), m.data() + m.size())}};
}

Mat matrix_from_json(const json& j) {
  try {
    const auto rows = j.at("rows").get<Eigen::Index>();
    const auto cols = j.at("cols").get<Eigen::Index>();
    const auto data = j.at("data").get<std::vector<double>>();
    if (rows < 0 || cols < 0 || static_cast<Eigen::Index>(data.size()) != rows * cols) {
      throw FormatError("matrix: data length does not match rows*cols");
    }
    return Eigen::Map<const Mat>(data.data(), rows, cols);
  } catch (const json::exception& e) {
    throw FormatError(std::string("matrix: ") + e.what());
  }
}

json vector_to_json(const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Vec vector_from_json(const json& j) {
  try {
    const auto data = j.get<std::vector<double>>();
    return Eigen::Map<const Vec>(data.data(), static_cast<Eigen::Index>(data.size()));
  } catch (const json::exception& e) {
    throw FormatError(std::string("vector: ") + e.what());
  }
}

namespace {

json matrices_to_json(const std::vector<Mat>& ms) {
  json out = json::array();
  for (const auto& m : ms) out.push_back(matrix_to_json(m));
  return out;
}

std::vector<Mat> matrices_from_json(const json& j) {
  std::vector<Mat> out;
  for (const auto& e : j) out.push_back(matrix_from_json(e));
  return out;
}

}  // namespace

json model_to_json(const MaracModel& model, const std::string& kind) {
  json j;
  j["kind"] = kind;
  j["P"] = model.P;
  j["Q"] = model.Q;
  j["mode"] = model.mode == AuxMode::exact ? "exact" : "truncated";
  j["A"] = matrices_to_json(model.A);
  j["B"] = matrices_to_json(model.B);
  j["aux"] = matrices_to_json(model.aux);
  j["sigma_r"] = matrix_to_json(model.sigma_r);
  j["sigma_c"] = matrix_to_json(model.sigma_c);
  j["lambda"] = model.lambda;
  j["diag_sigma"] = model.diag_sigma;
  j["latency"] = model.horizon;
  if (model.kernel) {
    j["grid"] = grid_to_json(model.kernel->grid, model.kernel->kernel);
    j["truncation_rank"] = model.kernel->truncation ? json(model.kernel->truncation->rank()) : json(nullptr);
  } else {
    j["grid"] = nullptr;
    j["truncation_rank"] = nullptr;
  }
  return j;
}

MaracModel model_from_json(const json& j) {
  try {
    MaracModel m;
    m.P = j.at("P").get<int>();
    m.Q = j.at("Q").get<int>();
    const auto mode = j.at("mode").get<std::string>();
    if (mode != "exact" && mode != "truncated") throw FormatError("model: unknown mode " + mode);
    m.mode = mode == "exact" ? AuxMode::exact : AuxMode::truncated;
    m.A = matrices_from_json(j.at("A"));
    m.B = matrices_from_json(j.at("B"));
    m.aux = matrices_from_json(j.at("aux"));
    m.sigma_r = matrix_from_json(j.at("sigma_r"));
    m.sigma_c = matrix_from_json(j.at("sigma_c"));
    m.lambda = j.at("lambda").get<double>();
    m.diag_sigma = j.value("diag_sigma", false);
    m.horizon = j.value("latency", 1);
    if (j.contains("grid") && !j.at("grid").is_null()) {
      auto [grid, kernel] = grid_from_json(j.at("grid"));
      std::optional<int> rank;
      if (j.contains("truncation_rank") && !j.at("truncation_rank").is_null()) rank = j.at("truncation_rank").get<int>();
      m.kernel = std::make_shared<const KernelContext>(make_kernel_context(std::move(grid), std::move(kernel), rank));
    }
    m.validate();
    return m;
  } catch (const json::exception& e) {
    throw FormatError(std::string("model: ") + e.what());
  }
}

std::optional<int> parse_mode(const std::string& text) {
  if (text == "exact") return std::nullopt;
  const std::string prefix = "truncated:";
  if (text.rfind(prefix, 0) == 0) {
    try {
      std::size_t used = 0;
      const int r = std::stoi(text.substr(prefix.size()), &used);
      if (used == text.size() - prefix.size() && r > 0) return r;
    } catch (const std::exception&) {
    }
  }
  throw ContractError("mode must be 'exact' or 'truncated:R' with R > 0, got '" + text + "'");
}

FitOptions fit_options_from_json(const json& j, FitOptions base) {
  try {
    if (j.contains("lambda")) base.lambda = j.at("lambda").get<double>();
    if (j.contains("max_iters")) base.max_iters = j.at("max_iters").get<int>();
    if (j.contains("rel_tol")) base.rel_tol = j.at("rel_tol").get<double>();
    if (j.contains("mode")) base.truncation_rank = parse_mode(j.at("mode").get<std::string>());
    if (j.contains("diag_sigma")) base.diag_sigma = j.at("diag_sigma").get<bool>();
    if (j.contains("seed")) base.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("latency")) base.horizon = j.at("latency").get<int>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("fit options: ") + e.what());
  }
  if (!(base.rel_tol > 0.0)) throw ContractError("fit options: rel_tol must be positive");
  return base;
}

json fit_options_to_json(const FitOptions& opts) {
  return json{{"lambda", opts.lambda},
              {"max_iters", opts.max_iters},
              {"rel_tol", opts.rel_tol},
              {"mode", opts.truncation_rank ? "truncated:" + std::to_string(*opts.truncation_rank) : "exact"},
              {"diag_sigma", opts.diag_sigma},
              {"seed", opts.seed},
              {"latency", opts.horizon}};
}

json fit_report_to_json(const FitReport& r) {
  return json{{"objective_trace", r.objective_trace},
              {"max_block_change", r.max_block_change},
              {"iters_run", r.iters_run},
              {"converged", r.converged},
              {"block_gradient_norms",
               {{"A", r.gradient_norms.a}, {"B", r.gradient_norms.b}, {"aux", r.gradient_norms.aux}}},
              {"df_total", r.df_total},
              {"df_per_lag", r.df_per_lag},
              {"gram_decay_exponent", r.gram_decay_exponent},
              {"seconds", r.seconds}};
}

void write_json_file(const std::string& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path);
  out << j.dump(2) << '\n';
  if (!out) throw FormatError("write failed for " + path);
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError(path + ": " + e.what());
  }
}

}  // namespace marac
