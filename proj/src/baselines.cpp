#include "marac/baselines.hpp"

#include "marac/errors.hpp"
#include "marac/parallel.hpp"
#include "marac/serialization.hpp"

#include <cmath>
#include <limits>

namespace marac {

using nlohmann::json;

Mat Forecaster::forecast_latency(const MatrixSeries& series, std::size_t t) const {
  if (t > series.length()) throw ContractError("forecast_latency: origin beyond series end");
  if (t < static_cast<std::size_t>(history())) throw ContractError("forecast_latency: not enough history");
  return predict_one(std::span<const Mat>(series.x.data(), t), std::span<const Vec>(series.z.data(), t));
}

double forecaster_rmse(const Forecaster& f, const MatrixSeries& series, std::size_t begin, std::size_t end) {
  if (begin >= end || end > series.length()) throw ContractError("forecaster_rmse: empty or invalid window");
  if (begin < f.first_target()) throw ContractError("forecaster_rmse: window starts before full history");
  const std::size_t shift = static_cast<std::size_t>(f.horizon() - 1);
  double sse = 0.0;
  for (std::size_t t = begin; t < end; ++t) sse += (series.x[t] - f.forecast_latency(series, t - shift)).squaredNorm();
  const double count = static_cast<double>(end - begin) * series.rows() * series.cols();
  return std::sqrt(sse / count);
}

MaracForecaster::MaracForecaster(MaracModel model, std::string kind) : model_(std::move(model)), kind_(std::move(kind)) {
  model_.validate();
}

Mat MaracForecaster::predict_one(std::span<const Mat> past_x, std::span<const Vec> past_z) const {
  return marac::predict_one(model_, past_x, past_z);
}

json MaracForecaster::to_json() const { return model_to_json(model_, kind_); }

FitResult fit_mar(const MatrixSeries& series, int P, const FitOptions& opts) {
  FitOptions fo = opts;
  fo.truncation_rank.reset();
  if (fo.warm_start && fo.warm_start->Q != 0) fo.warm_start.reset();
  return fit(series, P, 0, nullptr, fo);
}

MaracModel mar_lm_second_stage(const MatrixSeries& series, const MaracModel& mar, int Q,
                               std::shared_ptr<const KernelContext> kernel, const FitOptions& opts) {
  if (mar.Q != 0) throw ContractError("mar_lm_second_stage: first stage must have Q = 0");
  MaracModel model = mar;
  model.Q = Q;
  model.lambda = opts.lambda;
  model.aux.clear();
  if (Q == 0) return model;
  if (!kernel) throw ContractError("mar_lm_second_stage: Q > 0 requires a kernel context");
  if (opts.truncation_rank) {
    if (!kernel->truncation || kernel->truncation->rank() != *opts.truncation_rank) {
      kernel = std::make_shared<const KernelContext>(kernel->with_truncation(*opts.truncation_rank));
    }
    model.mode = AuxMode::truncated;
  } else {
    model.mode = AuxMode::exact;
  }
  model.kernel = kernel;
  const int basis_rows = opts.truncation_rank ? *opts.truncation_rank : model.rows() * model.cols();
  for (int q = 0; q < Q; ++q) model.aux.push_back(Mat::Zero(basis_rows, series.aux_dim()));

  const std::size_t first = opts.first_target.value_or(model.first_target());
  double sse = 0.0;
  for (std::size_t t = first; t < series.length(); ++t) sse += residual(mar, series, t).squaredNorm();
  const double sigma2 = sse / (static_cast<double>(series.length() - first) * model.rows() * model.cols());
  model.sigma_r = Mat::Identity(model.rows(), model.rows());
  model.sigma_c = std::max(sigma2, 1e-12) * Mat::Identity(model.cols(), model.cols());

  BlockState state(series, std::move(model), first);
  for (int iter = 0; iter < opts.max_iters; ++iter) {
    double worst = 0.0;
    for (int q = 1; q <= Q; ++q) {
      const Mat before = state.model().coeff_matrix(q);
      state.update_aux(q);
      const Mat after = state.model().coeff_matrix(q);
      worst = std::max(worst, (after - before).norm() / (1.0 + after.norm()));
    }
    if (Q == 1 || worst < opts.rel_tol) break;
  }
  return state.model();
}

MaracModel fit_mar_lm(const MatrixSeries& series, int P, int Q, std::shared_ptr<const KernelContext> kernel,
                      const FitOptions& opts) {
  FitOptions fo = opts;
  if (!fo.first_target) fo.first_target = static_cast<std::size_t>(std::max(P, Q) + fo.horizon - 1);
  const FitResult mar = fit_mar(series, P, fo);
  return mar_lm_second_stage(series, mar.model, Q, std::move(kernel), fo);
}

LambdaSearch tune_mar_lm(const MatrixSeries& series, int P, int Q, std::shared_ptr<const KernelContext> kernel,
                         const std::vector<double>& lambda_grid, const Split& split, FitOptions opts) {
  if (lambda_grid.empty()) throw ContractError("tune_mar_lm: empty lambda grid");
  if (split.train_end == 0 || split.val_end <= split.train_end || split.val_end > series.length()) {
    throw ContractError("tune_mar_lm: empty validation window");
  }
  const MatrixSeries train = series.slice(0, split.train_end);
  if (!opts.first_target) opts.first_target = static_cast<std::size_t>(std::max(P, Q) + opts.horizon - 1);
  const FitResult mar = fit_mar(train, P, opts);
  LambdaSearch out;
  double best = std::numeric_limits<double>::infinity();
  for (const double lambda : lambda_grid) {
    opts.lambda = lambda;
    MaracModel model = mar_lm_second_stage(train, mar.model, Q, kernel, opts);
    const double score = prediction_rmse(model, series, split.train_end, split.val_end);
    out.lambdas.push_back(lambda);
    out.validation_rmse.push_back(score);
    out.converged.push_back(true);
    if (score < best || (score == best && lambda > out.best_lambda)) {
      best = score;
      out.best_lambda = lambda;
      out.best_model = std::move(model);
    }
  }
  return out;
}

Mat PixelAr::predict_one(std::span<const Mat> past_x, std::span<const Vec> past_z) const {
  if (static_cast<int>(past_x.size()) < P || static_cast<int>(past_z.size()) < Q) {
    throw ContractError("PixelAr: not enough history");
  }
  Mat out = alpha;
  const auto m = alpha.rows();
  for (int p = 1; p <= P; ++p) out += beta[p - 1].cwiseProduct(past_x[past_x.size() - p]);
  for (int q = 1; q <= Q; ++q) {
    const Vec g = gamma[q - 1] * past_z[past_z.size() - q];
    out += Eigen::Map<const Mat>(g.data(), m, alpha.cols());
  }
  return out;
}

json PixelAr::to_json() const {
  json j{{"kind", kind()}, {"P", P}, {"Q", Q}, {"latency", h}, {"alpha", matrix_to_json(alpha)},
         {"sigma2", matrix_to_json(sigma2)}, {"ridge_fallbacks", ridge_fallbacks}};
  j["beta"] = json::array();
  for (const auto& b : beta) j["beta"].push_back(matrix_to_json(b));
  j["gamma"] = json::array();
  for (const auto& g : gamma) j["gamma"].push_back(matrix_to_json(g));
  return j;
}

PixelAr fit_pixel_ar(const MatrixSeries& series, int P, int Q, int horizon, int jobs) {
  series.validate();
  if (P < 0 || Q < 0 || horizon < 1) throw ContractError("fit_pixel_ar: bad lags or latency");
  const int m = series.rows();
  const int n = series.cols();
  const int d = Q > 0 ? series.aux_dim() : 0;
  const std::size_t shift = static_cast<std::size_t>(horizon - 1);
  const std::size_t first = static_cast<std::size_t>(std::max(P, Q)) + shift;
  const int k = P + d * Q;
  if (series.length() <= first || series.length() - first <= static_cast<std::size_t>(k + 1)) {
    throw InsufficientDataError("fit_pixel_ar: need more than " + std::to_string(k + 1) + " target frames");
  }
  const auto frames = static_cast<Eigen::Index>(series.length() - first);

  // Covariate columns are shared by every pixel.
  Mat zdesign(frames, d * Q);
  for (Eigen::Index r = 0; r < frames; ++r) {
    const std::size_t t = first + static_cast<std::size_t>(r);
    for (int q = 1; q <= Q; ++q) zdesign.row(r).segment((q - 1) * d, d) = series.z[t - shift - q].transpose();
  }

  PixelAr out;
  out.P = P;
  out.Q = Q;
  out.h = horizon;
  out.alpha = Mat::Zero(m, n);
  out.sigma2 = Mat::Zero(m, n);
  out.beta.assign(static_cast<std::size_t>(P), Mat::Zero(m, n));
  out.gamma.assign(static_cast<std::size_t>(Q), Mat::Zero(m * n, d));
  std::vector<char> fallback(static_cast<std::size_t>(m * n), 0);

  parallel_for(static_cast<std::size_t>(m * n), jobs, [&](std::size_t u) {
    const int i = static_cast<int>(u) % m;
    const int j = static_cast<int>(u) / m;
    Mat design(frames, k);
    Vec y(frames);
    for (Eigen::Index r = 0; r < frames; ++r) {
      const std::size_t t = first + static_cast<std::size_t>(r);
      y(r) = series.x[t](i, j);
      for (int p = 1; p <= P; ++p) design(r, p - 1) = series.x[t - shift - p](i, j);
    }
    if (d * Q > 0) design.rightCols(d * Q) = zdesign;
    const Vec means = design.colwise().mean().transpose();
    const double ybar = y.mean();
    Mat centered = design.rowwise() - means.transpose();
    const Vec yc = y.array() - ybar;
    Vec coef = Vec::Zero(k);
    if (k > 0) {
      Eigen::ColPivHouseholderQR<Mat> qr(centered);
      if (qr.rank() == k) {
        coef = qr.solve(yc);
      } else {
        Mat g = centered.transpose() * centered;
        g.diagonal().array() += 1e-8;
        coef = g.ldlt().solve(centered.transpose() * yc);
        fallback[u] = 1;
      }
    }
    out.alpha(i, j) = ybar - means.dot(coef);
    for (int p = 0; p < P; ++p) out.beta[p](i, j) = coef(p);
    for (int q = 0; q < Q; ++q) out.gamma[q].row(static_cast<Eigen::Index>(u)) = coef.segment(P + q * d, d).transpose();
    out.sigma2(i, j) = (yc - centered * coef).squaredNorm() / static_cast<double>(frames);
  });
  for (char f : fallback) out.ridge_fallbacks += f;
  return out;
}

Mat Varx::predict_one(std::span<const Mat> past_x, std::span<const Vec> past_z) const {
  if (static_cast<int>(past_x.size()) < P || static_cast<int>(past_z.size()) < Q) {
    throw ContractError("Varx: not enough history");
  }
  const int s = rows * cols;
  Vec pred = Vec::Zero(s);
  for (int p = 1; p <= P; ++p) pred.noalias() += coef.middleCols((p - 1) * s, s) * vec(past_x[past_x.size() - p]);
  const int d = Q > 0 ? static_cast<int>((coef.cols() - s * P) / Q) : 0;
  for (int q = 1; q <= Q; ++q) pred.noalias() += coef.middleCols(s * P + (q - 1) * d, d) * past_z[past_z.size() - q];
  return unvec(pred, rows, cols);
}

json Varx::to_json() const {
  return json{{"kind", kind()}, {"P", P},         {"Q", Q},         {"latency", h},
              {"rows", rows},   {"cols", cols},   {"ridge", ridge}, {"coef", matrix_to_json(coef)}};
}

Varx fit_varx(const MatrixSeries& series, int P, int Q, int horizon) {
  series.validate();
  if (P < 0 || Q < 0 || horizon < 1) throw ContractError("fit_varx: bad lags or latency");
  const int s = series.rows() * series.cols();
  const int d = Q > 0 ? series.aux_dim() : 0;
  const std::size_t shift = static_cast<std::size_t>(horizon - 1);
  const std::size_t first = static_cast<std::size_t>(std::max(P, Q)) + shift;
  const int k = s * P + d * Q;
  const std::size_t frames = series.length() > first ? series.length() - first : 0;
  if (static_cast<std::size_t>(k) >= frames) {
    throw InsufficientDataError("fit_varx: " + std::to_string(k) + " predictors for " + std::to_string(frames) +
                                " target frames; the problem is underdetermined, use MARAC instead");
  }
  Mat design(static_cast<Eigen::Index>(frames), k);
  Mat target(static_cast<Eigen::Index>(frames), s);
  for (std::size_t r = 0; r < frames; ++r) {
    const std::size_t t = first + r;
    const auto row = static_cast<Eigen::Index>(r);
    target.row(row) = vec(series.x[t]).transpose();
    for (int p = 1; p <= P; ++p) design.row(row).segment((p - 1) * s, s) = vec(series.x[t - shift - p]).transpose();
    for (int q = 1; q <= Q; ++q) design.row(row).segment(s * P + (q - 1) * d, d) = series.z[t - shift - q].transpose();
  }
  Varx out;
  out.P = P;
  out.Q = Q;
  out.h = horizon;
  out.rows = series.rows();
  out.cols = series.cols();
  out.underdetermined_warning = 2 * static_cast<std::size_t>(k) >= frames;
  if (k == 0) {
    out.coef = Mat::Zero(s, 0);
    return out;
  }
  Mat gram = design.transpose() * design;
  out.ridge = 1e-8 * (1.0 + gram.trace() / k);
  gram.diagonal().array() += out.ridge;
  out.coef = spd_solve(symmetrize(gram), design.transpose() * target).transpose();
  return out;
}

Mat Persistence::predict_one(std::span<const Mat> past_x, std::span<const Vec>) const {
  if (past_x.empty()) throw ContractError("persistence: no history");
  return past_x.back();
}

json Persistence::to_json() const { return json{{"kind", kind()}, {"latency", h_}}; }

Mat persistence(const MatrixSeries& series, std::size_t t, int h) {
  if (h < 1) throw ContractError("persistence: latency must be >= 1");
  if (t < 1 || t > series.length()) throw ContractError("persistence: no history before frame " + std::to_string(t));
  return series.x[t - 1];
}

std::unique_ptr<Forecaster> forecaster_from_json(const json& j) {
  try {
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "marac" || kind == "mar" || kind == "mar_lm") {
      return std::make_unique<MaracForecaster>(model_from_json(j), kind);
    }
    if (kind == "persistence") return std::make_unique<Persistence>(j.value("latency", 1));
    if (kind == "pixel_ar") {
      auto f = std::make_unique<PixelAr>();
      f->P = j.at("P").get<int>();
      f->Q = j.at("Q").get<int>();
      f->h = j.value("latency", 1);
      f->alpha = matrix_from_json(j.at("alpha"));
      f->sigma2 = matrix_from_json(j.at("sigma2"));
      f->ridge_fallbacks = j.value("ridge_fallbacks", 0);
      for (const auto& b : j.at("beta")) f->beta.push_back(matrix_from_json(b));
      for (const auto& g : j.at("gamma")) f->gamma.push_back(matrix_from_json(g));
      return f;
    }
    if (kind == "varx") {
      auto f = std::make_unique<Varx>();
      f->P = j.at("P").get<int>();
      f->Q = j.at("Q").get<int>();
      f->h = j.value("latency", 1);
      f->rows = j.at("rows").get<int>();
      f->cols = j.at("cols").get<int>();
      f->ridge = j.value("ridge", 0.0);
      f->coef = matrix_from_json(j.at("coef"));
      return f;
    }
    throw FormatError("model: unknown kind '" + kind + "'");
  } catch (const json::exception& e) {
    throw FormatError(std::string("model: ") + e.what());
  }
}

}  // namespace marac
