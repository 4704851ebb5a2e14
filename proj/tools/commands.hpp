#pragma once

// Command-line front end. run_cli parses argv and dispatches to one of the
// subcommands; it never calls exit, so tests can drive it in-process.

#include "marac/simulator.hpp"

#include <json.hpp>

#include <string>
#include <vector>

namespace marac::cli {

enum ExitCode : int {
  kOk = 0,
  kUsage = 1,
  kNotConverged = 2,
  kNonStationary = 3,
  kDataError = 4,
};

int run_cli(int argc, const char* const* argv);
int run_cli(const std::vector<std::string>& args);

SimConfig sim_config_from_json(const nlohmann::json& j);
nlohmann::json sim_config_to_json(const SimConfig& c);
nlohmann::json truth_to_json(const SimTruth& truth);

inline constexpr const char* kMetricsHeader = "method,h,split,rmse,rmse_minus_noise";

}  // namespace marac::cli
