#pragma once

// JSON documents for matrices, fitted models, fit options and fit reports.
// Doubles are written in shortest round-trip form, so reading back a written
// matrix is bit-exact.

#include "marac/estimator.hpp"

#include <json.hpp>

#include <string>

namespace marac {

// {"rows": r, "cols": c, "data": [column-major values]}
nlohmann::json matrix_to_json(const Mat& m);
Mat matrix_from_json(const nlohmann::json& j);
nlohmann::json vector_to_json(const Vec& v);
Vec vector_from_json(const nlohmann::json& j);

// model.json envelope, "kind": "marac" unless `kind` says otherwise (the MAR
// baselines reuse it). The kernel is stored as its grid description plus the
// truncation rank and rebuilt on load.
nlohmann::json model_to_json(const MaracModel& model, const std::string& kind = "marac");
MaracModel model_from_json(const nlohmann::json& j);

// Keys: lambda, max_iters, rel_tol, mode ("exact" | "truncated:R"),
// diag_sigma, seed, latency. Missing keys keep `base` values.
FitOptions fit_options_from_json(const nlohmann::json& j, FitOptions base = {});
nlohmann::json fit_options_to_json(const FitOptions& opts);

nlohmann::json fit_report_to_json(const FitReport& report);

// "exact" -> nullopt, "truncated:R" -> R. Throws ContractError otherwise.
std::optional<int> parse_mode(const std::string& text);

void write_json_file(const std::string& path, const nlohmann::json& j);
nlohmann::json read_json_file(const std::string& path);

}  // namespace marac
