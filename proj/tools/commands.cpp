#include "commands.hpp"

#include "marac/baselines.hpp"
#include "marac/data_io.hpp"
#include "marac/errors.hpp"
#include "marac/parallel.hpp"
#include "marac/selection.hpp"
#include "marac/serialization.hpp"
#include "marac/stationarity.hpp"
#include "marac/version.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <optional>
#include <sstream>
#include <unistd.h>

namespace marac::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct UsageError : Error {
  using Error::Error;
};

const std::vector<double> kDefaultLambdaGrid{1e-4, 1e-3, 1e-2, 1e-1, 1.0};

struct Args {
  std::string command;
  std::vector<std::string> argv;
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  int jobs = 1;
  std::string data;
  std::string model;
  std::optional<double> lambda;
  std::string lags;
  std::string mode;
  std::string latency;
  bool diag_sigma = false;
  std::string lambdas;
  int p_min = 0;
  int q_min = 0;
  std::optional<int> p_max;
  std::optional<int> q_max;
  bool tune = false;
  bool tune_each = false;
  std::string methods;
  std::string split = "test";
  std::string metrics;
  std::optional<double> noise_variance;
  bool dump_predictions = false;
  bool center = false;
};

std::string fmt(double v) {
  if (!std::isfinite(v)) return "nan";
  std::ostringstream ss;
  ss << std::setprecision(std::numeric_limits<double>::max_digits10) << v;
  return ss.str();
}

std::vector<std::string> split_commas(const std::string& text) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(text);
  while (std::getline(ss, cell, ',')) {
    if (!cell.empty()) out.push_back(cell);
  }
  return out;
}

int to_int(const std::string& s, const char* what) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw UsageError(std::string(what) + ": expected an integer, got '" + s + "'");
}

double to_double(const std::string& s, const char* what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw UsageError(std::string(what) + ": expected a number, got '" + s + "'");
}

std::pair<int, int> parse_lags(const std::string& text) {
  const auto parts = split_commas(text);
  if (parts.size() != 2) throw UsageError("--lags expects P,Q");
  const int p = to_int(parts[0], "--lags");
  const int q = to_int(parts[1], "--lags");
  if (p < 0 || q < 0) throw UsageError("--lags must be non-negative");
  return {p, q};
}

std::vector<int> parse_latencies(const std::string& text) {
  std::vector<int> out;
  for (const auto& s : split_commas(text)) {
    const int h = to_int(s, "--latency");
    if (h < 1) throw UsageError("--latency values must be >= 1");
    out.push_back(h);
  }
  if (out.empty()) throw UsageError("--latency is empty");
  return out;
}

std::vector<double> parse_lambdas(const std::string& text, const json& config) {
  std::vector<double> out;
  if (!text.empty()) {
    for (const auto& s : split_commas(text)) out.push_back(to_double(s, "--lambdas"));
  } else if (config.contains("lambda_grid")) {
    out = config.at("lambda_grid").get<std::vector<double>>();
  } else {
    out = kDefaultLambdaGrid;
  }
  if (out.empty()) throw UsageError("lambda grid is empty");
  for (double l : out) {
    if (!(l >= 0.0)) throw UsageError("lambda values must be non-negative");
  }
  return out;
}

json load_config(const Args& a) { return a.config.empty() ? json::object() : read_json_file(a.config); }

// Builds the output in a temporary sibling directory and renames it into
// place on commit, so a failed run never leaves a half-written directory.
class OutputDir {
 public:
  explicit OutputDir(const std::string& target) : target_(target) {
    if (target.empty()) throw UsageError("--out is required");
    if (fs::exists(target_) && (!fs::is_directory(target_) || !fs::is_empty(target_))) {
      throw UsageError("output directory " + target + " exists and is not empty");
    }
    const fs::path parent = target_.has_parent_path() ? target_.parent_path() : fs::path(".");
    fs::create_directories(parent);
    temp_ = parent / (target_.filename().string() + ".partial-" + std::to_string(::getpid()));
    fs::remove_all(temp_);
    fs::create_directories(temp_);
  }
  OutputDir(const OutputDir&) = delete;
  OutputDir& operator=(const OutputDir&) = delete;
  ~OutputDir() {
    if (!committed_) {
      std::error_code ec;
      fs::remove_all(temp_, ec);
    }
  }

  fs::path path() const { return temp_; }
  std::string file(const std::string& name) const { return (temp_ / name).string(); }

  void commit() {
    if (fs::exists(target_)) fs::remove(target_);  // empty by construction
    fs::rename(temp_, target_);
    committed_ = true;
  }

 private:
  fs::path target_;
  fs::path temp_;
  bool committed_ = false;
};

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path);
  out << text;
}

void write_provenance(const OutputDir& out, const Args& a, const json& config, const json& extra = json::object()) {
  json p{{"tool", "marac"},
         {"version", kVersion},
         {"command", a.command},
         {"argv", a.argv},
         {"seed", a.seed ? json(*a.seed) : json(nullptr)},
         {"jobs", a.jobs},
         {"config", config}};
  for (auto it = extra.begin(); it != extra.end(); ++it) p[it.key()] = it.value();
  write_json_file(out.file("provenance.json"), p);
}

std::shared_ptr<const KernelContext> kernel_for(const SeriesBundle& b) {
  if (b.grid) {
    auto [grid, kernel] = grid_from_json(*b.grid);
    if (grid.rows != b.series.rows() || grid.cols != b.series.cols()) {
      throw FormatError("grid.json: grid shape differs from the series");
    }
    return std::make_shared<const KernelContext>(make_kernel_context(std::move(grid), std::move(kernel)));
  }
  return std::make_shared<const KernelContext>(
      make_kernel_context(GridSpec::planar(b.series.rows(), b.series.cols()), PlanarProductKernel{}));
}

FitOptions fit_options(const Args& a, const json& config) {
  FitOptions opts = fit_options_from_json(config.contains("fit") ? config.at("fit") : config);
  if (a.lambda) opts.lambda = *a.lambda;
  if (!a.mode.empty()) opts.truncation_rank = parse_mode(a.mode);
  if (a.diag_sigma) opts.diag_sigma = true;
  if (a.seed) opts.seed = *a.seed;
  return opts;
}

std::pair<int, int> lags_from(const Args& a, const json& config, std::pair<int, int> fallback) {
  if (!a.lags.empty()) return parse_lags(a.lags);
  if (config.contains("P") || config.contains("Q")) return {config.value("P", 1), config.value("Q", 1)};
  return fallback;
}

std::optional<double> noise_variance_for(const Args& a) {
  if (a.noise_variance) return a.noise_variance;
  const fs::path truth = fs::path(a.data) / "truth.json";
  if (!a.data.empty() && fs::exists(truth)) {
    const json t = read_json_file(truth.string());
    if (t.contains("noise_variance")) return t.at("noise_variance").get<double>();
  }
  return std::nullopt;
}

struct MetricRow {
  std::string method;
  int h = 1;
  std::string split;
  double rmse = 0.0;
};

std::string metrics_csv(const std::vector<MetricRow>& rows, std::optional<double> noise_var, bool header) {
  std::ostringstream ss;
  if (header) ss << kMetricsHeader << '\n';
  for (const auto& r : rows) {
    ss << r.method << ',' << r.h << ',' << r.split << ',' << fmt(r.rmse) << ',';
    if (noise_var) ss << fmt(r.rmse - std::sqrt(*noise_var));
    ss << '\n';
  }
  return ss.str();
}

void append_metrics(const std::string& path, const std::vector<MetricRow>& rows, std::optional<double> noise_var) {
  bool need_header = true;
  if (fs::exists(path) && fs::file_size(path) > 0) {
    std::ifstream in(path);
    std::string first;
    std::getline(in, first);
    if (first != kMetricsHeader) throw FormatError(path + ": existing header does not match the metrics schema");
    need_header = false;
  }
  std::ofstream out(path, std::ios::app);
  if (!out) throw FormatError("cannot append to " + path);
  out << metrics_csv(rows, noise_var, need_header);
}

std::pair<std::size_t, std::size_t> window_for(const std::string& name, const Split& split, std::size_t total) {
  if (name == "train") return {0, split.train_end};
  if (name == "val") return {split.train_end, split.val_end};
  if (name == "test") return {split.val_end, total};
  if (name == "all") return {0, total};
  throw UsageError("--split must be train, val, test or all");
}

void write_frames(const std::string& path, const std::vector<Mat>& frames) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path);
  for (const auto& f : frames) {
    for (Eigen::Index i = 0; i < f.rows(); ++i) {
      for (Eigen::Index j = 0; j < f.cols(); ++j) {
        const double v = f(i, j);
        unsigned char bytes[8];
        std::uint64_t bits;
        std::memcpy(&bits, &v, 8);
        for (int b = 0; b < 8; ++b) bytes[b] = static_cast<unsigned char>(bits >> (8 * b));
        out.write(reinterpret_cast<const char*>(bytes), 8);
      }
    }
  }
}

std::vector<Mat> forecasts(const Forecaster& f, const MatrixSeries& s, std::size_t begin, std::size_t end) {
  std::vector<Mat> out;
  const std::size_t shift = static_cast<std::size_t>(f.horizon() - 1);
  for (std::size_t t = begin; t < end; ++t) out.push_back(f.forecast_latency(s, t - shift));
  return out;
}

double rmse_of(const std::vector<Mat>& pred, const MatrixSeries& s, std::size_t begin) {
  double sse = 0.0;
  for (std::size_t k = 0; k < pred.size(); ++k) sse += (s.x[begin + k] - pred[k]).squaredNorm();
  return std::sqrt(sse / (static_cast<double>(pred.size()) * s.rows() * s.cols()));
}

// ---------------------------------------------------------------- simulate

int cmd_simulate(const Args& a) {
  json config = load_config(a);
  if (a.seed) config["seed"] = *a.seed;
  const SimConfig cfg = sim_config_from_json(config);
  const SimBundle bundle = simulate(cfg);
  OutputDir out(a.out);
  write_bundle(bundle.series, bundle.split, out.path().string(),
               grid_to_json(bundle.truth.model.kernel->grid, bundle.truth.model.kernel->kernel));
  write_json_file(out.file("truth.json"), truth_to_json(bundle.truth));
  write_provenance(out, a, sim_config_to_json(cfg));
  out.commit();
  std::cout << "wrote " << cfg.total() << " frames of " << cfg.M << "x" << cfg.N << " to " << a.out << '\n';
  return kOk;
}

// --------------------------------------------------------------------- fit

int cmd_fit(const Args& a) {
  if (a.data.empty()) throw UsageError("fit needs --data");
  const json config = load_config(a);
  const SeriesBundle b = read_bundle(a.data);
  FitOptions opts = fit_options(a, config);
  if (!a.latency.empty()) opts.horizon = parse_latencies(a.latency).at(0);
  const auto [P, Q] = lags_from(a, config, {1, 1});
  const MatrixSeries train = b.series.slice(0, b.split.train_end);
  const FitResult res = fit(train, P, Q, Q > 0 ? kernel_for(b) : nullptr, opts);
  OutputDir out(a.out);
  write_json_file(out.file("model.json"), model_to_json(res.model));
  json report = fit_report_to_json(res.report);
  report["options"] = fit_options_to_json(opts);
  write_json_file(out.file("fit_report.json"), report);
  std::ostringstream trace;
  trace << "iter,objective,max_block_change\n";
  for (std::size_t i = 0; i < res.report.objective_trace.size(); ++i) {
    trace << i << ',' << fmt(res.report.objective_trace[i]) << ',';
    if (i > 0) trace << fmt(res.report.max_block_change[i - 1]);
    trace << '\n';
  }
  write_text(out.file("trace.csv"), trace.str());
  write_provenance(out, a, config, {{"fit_options", fit_options_to_json(opts)}});
  out.commit();
  std::cout << "fit MARAC(" << P << "," << Q << ") in " << res.report.iters_run << " iterations, "
            << (res.report.converged ? "converged" : "not converged") << ", objective "
            << fmt(res.report.objective_trace.back()) << '\n';
  return res.report.converged ? kOk : kNotConverged;
}

// ------------------------------------------------------------- tune-lambda

int cmd_tune(const Args& a) {
  if (a.data.empty()) throw UsageError("tune-lambda needs --data");
  const json config = load_config(a);
  const SeriesBundle b = read_bundle(a.data);
  FitOptions opts = fit_options(a, config);
  if (!a.latency.empty()) opts.horizon = parse_latencies(a.latency).at(0);
  const auto [P, Q] = lags_from(a, config, {1, 1});
  if (b.split.val_end <= b.split.train_end) throw UsageError("tune-lambda needs a non-empty validation split");
  const auto grid = parse_lambdas(a.lambdas, config);
  const LambdaSearch res = tune_lambda(b.series, P, Q, Q > 0 ? kernel_for(b) : nullptr, grid, b.split, opts);
  OutputDir out(a.out);
  std::ostringstream csv;
  csv << "lambda,validation_rmse,converged\n";
  for (std::size_t i = 0; i < res.lambdas.size(); ++i) {
    csv << fmt(res.lambdas[i]) << ',' << fmt(res.validation_rmse[i]) << ',' << (res.converged[i] ? 1 : 0) << '\n';
  }
  write_text(out.file("lambda.csv"), csv.str());
  write_json_file(out.file("best.json"), json{{"best_lambda", res.best_lambda}, {"P", P}, {"Q", Q}});
  write_json_file(out.file("model.json"), model_to_json(res.best_model));
  write_provenance(out, a, config, {{"lambda_grid", grid}});
  out.commit();
  std::cout << "best lambda " << fmt(res.best_lambda) << '\n';
  return kOk;
}

// ------------------------------------------------------------- select-lags

int cmd_select(const Args& a) {
  if (a.data.empty()) throw UsageError("select-lags needs --data");
  const json config = load_config(a);
  const SeriesBundle b = read_bundle(a.data);
  SelectOptions so;
  so.fit = fit_options(a, config);
  if (!a.latency.empty()) so.fit.horizon = parse_latencies(a.latency).at(0);
  so.p_min = a.p_min;
  so.q_min = a.q_min;
  so.p_max = a.p_max.value_or(config.value("Pmax", 2));
  so.q_max = a.q_max.value_or(config.value("Qmax", 2));
  so.jobs = a.jobs;
  if (a.tune || a.tune_each) {
    if (b.split.val_end <= b.split.train_end) throw UsageError("--tune needs a non-empty validation split");
    so.lambda_grid = parse_lambdas(a.lambdas, config);
    so.split = b.split;
    so.tune_each = a.tune_each;
  }
  // Information criteria use every frame before the test window.
  const MatrixSeries fit_series = b.series.slice(0, b.split.val_end);
  const bool need_kernel = so.q_max > 0;
  const SelectionResult res = select_lags(fit_series, need_kernel ? kernel_for(b) : nullptr, so);
  OutputDir out(a.out);
  std::ostringstream csv;
  csv << "P,Q,df,nll,AIC,BIC,lambda,converged,error\n";
  for (const auto& c : res.cells) {
    csv << c.P << ',' << c.Q << ',';
    if (c.ok) {
      csv << fmt(c.df) << ',' << fmt(c.nll) << ',' << fmt(c.aic) << ',' << fmt(c.bic) << ',' << fmt(c.lambda) << ','
          << (c.converged ? 1 : 0) << ',';
    } else {
      std::string msg = c.error;
      for (char& ch : msg) {
        if (ch == ',' || ch == '\n') ch = ';';
      }
      csv << ",,,,,," << msg;
    }
    csv << '\n';
  }
  write_text(out.file("selection.csv"), csv.str());
  auto pair_json = [](const std::optional<std::pair<int, int>>& p) {
    return p ? json{{"P", p->first}, {"Q", p->second}} : json(nullptr);
  };
  write_json_file(out.file("chosen.json"),
                  json{{"aic", pair_json(res.chosen_aic)}, {"bic", pair_json(res.chosen_bic)},
                       {"first_target", res.first_target}});
  write_provenance(out, a, config, {{"fit_options", fit_options_to_json(so.fit)}});
  out.commit();
  if (res.chosen_bic) std::cout << "BIC chooses P=" << res.chosen_bic->first << " Q=" << res.chosen_bic->second << '\n';
  if (res.chosen_aic) std::cout << "AIC chooses P=" << res.chosen_aic->first << " Q=" << res.chosen_aic->second << '\n';
  return res.chosen_bic ? kOk : kDataError;
}

// ----------------------------------------------------------------- predict

int cmd_predict(const Args& a) {
  if (a.data.empty() || a.model.empty()) throw UsageError("predict needs --data and --model");
  const SeriesBundle b = read_bundle(a.data);
  const auto f = forecaster_from_json(read_json_file(a.model));
  if (!a.latency.empty() && parse_latencies(a.latency).at(0) != f->horizon()) {
    throw UsageError("model was fitted for latency " + std::to_string(f->horizon()));
  }
  auto [begin, end] = window_for(a.split, b.split, b.series.length());
  begin = std::max(begin, f->first_target());
  if (begin >= end) throw UsageError("the " + a.split + " window has no frame with a full history");
  const std::vector<Mat> pred = forecasts(*f, b.series, begin, end);
  const double rmse = rmse_of(pred, b.series, begin);
  OutputDir out(a.out);
  write_frames(out.file("predictions.bin"), pred);
  write_json_file(out.file("predictions.json"), json{{"kind", f->kind()},
                                                     {"latency", f->horizon()},
                                                     {"first_target", begin},
                                                     {"count", pred.size()},
                                                     {"M", b.series.rows()},
                                                     {"N", b.series.cols()},
                                                     {"dtype", "f64le"},
                                                     {"layout", "frame-major,row-major"}});
  const auto noise = noise_variance_for(a);
  write_text(out.file("metrics.csv"), metrics_csv({{f->kind(), f->horizon(), a.split, rmse}}, noise, true));
  write_provenance(out, a, json::object());
  out.commit();
  std::cout << f->kind() << " " << a.split << " rmse " << fmt(rmse) << '\n';
  return kOk;
}

// --------------------------------------------------------------- benchmark

struct BenchTask {
  std::string method;
  int h = 1;
};

std::unique_ptr<Forecaster> fit_method(const std::string& method, const MatrixSeries& series, const Split& split,
                                       int P, int Q, int h, std::shared_ptr<const KernelContext> kernel,
                                       FitOptions opts, const std::vector<double>& grid) {
  opts.horizon = h;
  const MatrixSeries train = series.slice(0, split.train_end);
  const bool has_val = split.val_end > split.train_end;
  if (method == "marac") {
    if (has_val) return std::make_unique<MaracForecaster>(tune_lambda(series, P, Q, kernel, grid, split, opts).best_model);
    return std::make_unique<MaracForecaster>(fit(train, P, Q, kernel, opts).model);
  }
  if (method == "mar") return std::make_unique<MaracForecaster>(fit_mar(train, P, opts).model, "mar");
  if (method == "mar_lm") {
    if (has_val) {
      return std::make_unique<MaracForecaster>(tune_mar_lm(series, P, Q, kernel, grid, split, opts).best_model, "mar_lm");
    }
    return std::make_unique<MaracForecaster>(fit_mar_lm(train, P, Q, kernel, opts), "mar_lm");
  }
  if (method == "pixel_ar") return std::make_unique<PixelAr>(fit_pixel_ar(train, P, Q, h));
  if (method == "varx") return std::make_unique<Varx>(fit_varx(train, P, Q, h));
  if (method == "persistence") return std::make_unique<Persistence>(h);
  throw UsageError("unknown method '" + method + "'");
}

int cmd_benchmark(const Args& a) {
  if (a.data.empty()) throw UsageError("benchmark needs --data");
  const json config = load_config(a);
  std::vector<std::string> methods = split_commas(a.methods);
  if (methods.empty() && config.contains("methods")) methods = config.at("methods").get<std::vector<std::string>>();
  if (methods.empty()) throw UsageError("benchmark needs a non-empty --methods list");
  const std::vector<std::string> known{"marac", "mar", "mar_lm", "pixel_ar", "varx", "persistence"};
  for (const auto& m : methods) {
    if (std::find(known.begin(), known.end(), m) == known.end()) throw UsageError("unknown method '" + m + "'");
  }
  const std::vector<int> hs = parse_latencies(a.latency.empty() ? "1" : a.latency);
  const auto [P, Q] = lags_from(a, config, {1, 1});
  const FitOptions opts = fit_options(a, config);
  const auto grid = parse_lambdas(a.lambdas, config);

  SeriesBundle b = read_bundle(a.data);
  MatrixSeries series = b.series;
  if (a.center) series = center_by_train_mean(b.series, b.split).first;
  const auto kernel = Q > 0 ? kernel_for(b) : nullptr;
  const auto noise = noise_variance_for(a);

  std::vector<BenchTask> tasks;
  for (int h : hs) {
    for (const auto& m : methods) tasks.push_back({m, h});
  }
  std::vector<std::vector<MetricRow>> rows(tasks.size());
  std::vector<std::string> failures(tasks.size());
  std::vector<std::vector<std::pair<std::string, std::vector<Mat>>>> dumps(tasks.size());
  parallel_for(tasks.size(), a.jobs, [&](std::size_t i) {
    const BenchTask& task = tasks[i];
    try {
      const auto f = fit_method(task.method, series, b.split, P, Q, task.h, kernel, opts, grid);
      for (const char* name : {"val", "test"}) {
        auto [begin, end] = window_for(name, b.split, series.length());
        begin = std::max(begin, f->first_target());
        if (begin >= end) continue;
        const std::vector<Mat> pred = forecasts(*f, series, begin, end);
        rows[i].push_back({task.method, task.h, name, rmse_of(pred, series, begin)});
        if (a.dump_predictions) dumps[i].emplace_back(task.method + "_h" + std::to_string(task.h) + "_" + name, pred);
      }
    } catch (const UsageError&) {
      throw;
    } catch (const std::exception& e) {
      failures[i] = e.what();
    }
  });

  std::vector<MetricRow> all;
  json failed = json::array();
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    all.insert(all.end(), rows[i].begin(), rows[i].end());
    if (!failures[i].empty()) {
      std::cerr << "warning: " << tasks[i].method << " h=" << tasks[i].h << " failed: " << failures[i] << '\n';
      failed.push_back({{"method", tasks[i].method}, {"h", tasks[i].h}, {"error", failures[i]}});
    }
  }
  OutputDir out(a.out);
  write_text(out.file("metrics.csv"), metrics_csv(all, noise, true));
  for (const auto& task_dumps : dumps) {
    for (const auto& [name, pred] : task_dumps) write_frames(out.file(name + ".bin"), pred);
  }
  write_provenance(out, a, config, {{"failures", failed}, {"lambda_grid", grid}});
  out.commit();
  if (!a.metrics.empty()) append_metrics(a.metrics, all, noise);
  std::cout << metrics_csv(all, noise, true);
  return kOk;
}

// ------------------------------------------------------------ stationarity

int cmd_stationarity(const Args& a) {
  if (a.model.empty()) throw UsageError("stationarity needs --model");
  const json doc = read_json_file(a.model);
  const MaracModel m = model_from_json(doc);
  std::vector<std::pair<Mat, Mat>> ab;
  for (int p = 0; p < m.P; ++p) ab.emplace_back(m.A[p], m.B[p]);
  std::vector<Mat> aux;
  if (doc.contains("aux_coef")) aux.push_back(matrix_from_json(doc.at("aux_coef")));
  const StationarityVerdict v = check_stationarity(ab, aux);
  const json verdict{{"marac_radius", v.marac_radius},
                     {"aux_radius", v.aux_radius},
                     {"margin", v.margin},
                     {"stationary", v.stationary}};
  std::cout << verdict.dump(2) << '\n';
  if (!a.out.empty()) {
    OutputDir out(a.out);
    write_json_file(out.file("verdict.json"), verdict);
    write_provenance(out, a, json::object());
    out.commit();
  }
  return v.stationary ? kOk : kNonStationary;
}

}  // namespace

// ------------------------------------------------------------------ config

SimConfig sim_config_from_json(const json& j) {
  SimConfig c;
  try {
    c.M = j.value("M", c.M);
    c.N = j.value("N", c.N);
    c.D = j.value("D", c.D);
    c.P = j.value("P", c.P);
    c.Q = j.value("Q", c.Q);
    c.T_train = j.value("T_train", c.T_train);
    c.T_val = j.value("T_val", c.T_val);
    c.T_test = j.value("T_test", c.T_test);
    c.band_width = j.value("band_width", c.band_width);
    c.target_radius = j.value("target_radius", c.target_radius);
    c.lag_decay = j.value("lag_decay", c.lag_decay);
    c.noise_offdiag = j.value("noise_offdiag", c.noise_offdiag);
    c.signal_scale = j.value("signal_scale", c.signal_scale);
    c.seed = j.value("seed", c.seed);
    c.burn_in = j.value("burn_in", c.burn_in);
    if (j.contains("aux_coef")) {
      const auto& ac = j.at("aux_coef");
      c.aux_coef = ac.is_number() ? Mat(ac.get<double>() * Mat::Identity(c.D, c.D)) : matrix_from_json(ac);
    }
    const std::string noise = j.value("noise", std::string("banded"));
    if (noise == "banded") {
      c.noise = NoiseKind::banded;
    } else if (noise == "identity") {
      c.noise = NoiseKind::identity;
    } else if (noise == "diagonal") {
      c.noise = NoiseKind::diagonal;
    } else {
      throw FormatError("config: noise must be banded, identity or diagonal");
    }
    if (j.contains("grid")) {
      json g = j.at("grid");
      g["M"] = c.M;
      g["N"] = c.N;
      auto [grid, kernel] = grid_from_json(g);
      c.grid = std::move(grid);
      c.kernel = std::move(kernel);
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

json sim_config_to_json(const SimConfig& c) {
  const char* noise = c.noise == NoiseKind::banded ? "banded" : c.noise == NoiseKind::identity ? "identity" : "diagonal";
  json j{{"M", c.M},
         {"N", c.N},
         {"D", c.D},
         {"P", c.P},
         {"Q", c.Q},
         {"T_train", c.T_train},
         {"T_val", c.T_val},
         {"T_test", c.T_test},
         {"band_width", c.band_width},
         {"target_radius", c.target_radius},
         {"lag_decay", c.lag_decay},
         {"noise", noise},
         {"noise_offdiag", c.noise_offdiag},
         {"signal_scale", c.signal_scale},
         {"seed", c.seed},
         {"burn_in", c.burn_in}};
  if (c.aux_coef.size() > 0) j["aux_coef"] = matrix_to_json(c.aux_coef);
  const GridSpec grid = c.grid.locations.empty() ? GridSpec::planar(c.M, c.N) : c.grid;
  j["grid"] = grid_to_json(grid, c.kernel);
  return j;
}

json truth_to_json(const SimTruth& truth) {
  json j = model_to_json(truth.model, "marac");
  j["g"] = json::array();
  for (const auto& g : truth.g) j["g"].push_back(matrix_to_json(g));
  j["aux_coef"] = matrix_to_json(truth.aux_coef);
  j["noise_variance"] = truth.noise_variance;
  return j;
}

int run_cli(int argc, const char* const* argv) {
  Args a;
  for (int i = 0; i < argc; ++i) a.argv.emplace_back(argv[i]);
  CLI::App app{"Matrix autoregression with auxiliary covariates", "marac"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", a.config, "JSON config file")->check(CLI::ExistingFile);
    sub->add_option("--out", a.out, "output directory (created atomically)");
    sub->add_option("--seed", a.seed, "random seed");
    sub->add_option("--jobs", a.jobs, "worker threads")->check(CLI::PositiveNumber);
  };
  auto fitting = [&](CLI::App* sub) {
    sub->add_option("--data", a.data, "bundle directory")->check(CLI::ExistingDirectory);
    sub->add_option("--lambda", a.lambda, "penalty weight");
    sub->add_option("--lags", a.lags, "lags as P,Q");
    sub->add_option("--mode", a.mode, "exact or truncated:R");
    sub->add_option("--latency", a.latency, "forecast latency h");
    sub->add_flag("--diag-sigma", a.diag_sigma, "diagonal row/column covariances");
  };

  auto* sim = app.add_subcommand("simulate", "simulate a MARAC dataset into a bundle");
  common(sim);
  auto* fit_cmd = app.add_subcommand("fit", "fit MARAC(P,Q) on the training split");
  common(fit_cmd);
  fitting(fit_cmd);
  auto* tune = app.add_subcommand("tune-lambda", "choose lambda on the validation split");
  common(tune);
  fitting(tune);
  tune->add_option("--lambdas", a.lambdas, "comma-separated lambda grid");
  auto* sel = app.add_subcommand("select-lags", "AIC/BIC over a (P,Q) grid");
  common(sel);
  fitting(sel);
  sel->add_option("--pmin", a.p_min, "smallest P");
  sel->add_option("--qmin", a.q_min, "smallest Q");
  sel->add_option("--pmax", a.p_max, "largest P");
  sel->add_option("--qmax", a.q_max, "largest Q");
  sel->add_flag("--tune", a.tune, "tune one lambda at (Pmax, Qmax) and share it");
  sel->add_flag("--tune-each", a.tune_each, "tune lambda for every candidate");
  sel->add_option("--lambdas", a.lambdas, "comma-separated lambda grid");
  auto* pred = app.add_subcommand("predict", "forecast a split with a saved model");
  common(pred);
  pred->add_option("--data", a.data, "bundle directory")->check(CLI::ExistingDirectory);
  pred->add_option("--model", a.model, "model.json")->check(CLI::ExistingFile);
  pred->add_option("--split", a.split, "train, val, test or all");
  pred->add_option("--latency", a.latency, "expected latency h");
  pred->add_option("--noise-variance", a.noise_variance, "known noise variance");
  auto* bench = app.add_subcommand("benchmark", "fit and score several methods");
  common(bench);
  fitting(bench);
  bench->add_option("--methods", a.methods, "comma list of marac,mar,mar_lm,pixel_ar,varx,persistence");
  bench->add_option("--lambdas", a.lambdas, "comma-separated lambda grid");
  bench->add_option("--metrics", a.metrics, "also append rows to this CSV");
  bench->add_option("--noise-variance", a.noise_variance, "known noise variance");
  bench->add_flag("--dump-predictions", a.dump_predictions, "write per-method prediction frames");
  bench->add_flag("--center", a.center, "subtract training means first");
  auto* stat = app.add_subcommand("stationarity", "companion spectral radii of a saved model");
  common(stat);
  stat->add_option("--model", a.model, "model.json or truth.json")->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  } catch (const CLI::CallForVersion& e) {
    app.exit(e);
    return kOk;
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  a.command = app.get_subcommands().front()->get_name();
  try {
    if (a.command == "simulate") return cmd_simulate(a);
    if (a.command == "fit") return cmd_fit(a);
    if (a.command == "tune-lambda") return cmd_tune(a);
    if (a.command == "select-lags") return cmd_select(a);
    if (a.command == "predict") return cmd_predict(a);
    if (a.command == "benchmark") return cmd_benchmark(a);
    if (a.command == "stationarity") return cmd_stationarity(a);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const StationarityError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kNonStationary;
  } catch (const ContractError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kDataError;
  }
  return kUsage;
}

int run_cli(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  argv.push_back("marac");
  for (const auto& s : args) argv.push_back(s.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

}  // namespace marac::cli
