#pragma once

// Competing forecasters: MAR, two-step MAR+LM, pixel-wise AR, VARX and
// persistence, all behind one Forecaster interface.

#include "marac/estimator.hpp"

#include <json.hpp>

#include <memory>
#include <span>
#include <string>
#include <vector>

namespace marac {

class Forecaster {
 public:
  virtual ~Forecaster() = default;

  virtual std::string kind() const = 0;
  // Latency h the forecaster was fitted for.
  virtual int horizon() const = 0;
  // Number of past frames predict_one reads.
  virtual int history() const = 0;
  // Forecast from the most recent frames; past_x.back() is the newest.
  virtual Mat predict_one(std::span<const Mat> past_x, std::span<const Vec> past_z) const = 0;
  virtual nlohmann::json to_json() const = 0;

  // Forecast of frame t + h - 1 from frames [0, t).
  Mat forecast_latency(const MatrixSeries& series, std::size_t t) const;
  // First target frame with a full history.
  std::size_t first_target() const { return static_cast<std::size_t>(history() + horizon() - 1); }
};

// RMSE over target frames [begin, end).
double forecaster_rmse(const Forecaster& f, const MatrixSeries& series, std::size_t begin, std::size_t end);

class MaracForecaster : public Forecaster {
 public:
  MaracForecaster(MaracModel model, std::string kind = "marac");

  std::string kind() const override { return kind_; }
  int horizon() const override { return model_.horizon; }
  int history() const override { return model_.max_lag(); }
  Mat predict_one(std::span<const Mat> past_x, std::span<const Vec> past_z) const override;
  nlohmann::json to_json() const override;
  const MaracModel& model() const { return model_; }

 private:
  MaracModel model_;
  std::string kind_;
};

// MARAC with Q = 0; lambda and kernel are irrelevant.
FitResult fit_mar(const MatrixSeries& series, int P, const FitOptions& opts);

// Step two of MAR+LM: auxiliary coefficients regressed on the residuals of a
// fixed MAR fit with Sigma = sigma^2 I, sigma^2 the mean squared residual.
// Returns a MARAC-shaped model holding the MAR blocks and the regression.
MaracModel mar_lm_second_stage(const MatrixSeries& series, const MaracModel& mar, int Q,
                               std::shared_ptr<const KernelContext> kernel, const FitOptions& opts);

MaracModel fit_mar_lm(const MatrixSeries& series, int P, int Q, std::shared_ptr<const KernelContext> kernel,
                      const FitOptions& opts);

// One MAR fit on the training window, then the second stage for every lambda,
// scored on the validation window. Ties go to the larger lambda.
LambdaSearch tune_mar_lm(const MatrixSeries& series, int P, int Q, std::shared_ptr<const KernelContext> kernel,
                         const std::vector<double>& lambda_grid, const Split& split, FitOptions opts);

// Per-entry least squares with intercept, own lags and covariate lags.
class PixelAr : public Forecaster {
 public:
  std::string kind() const override { return "pixel_ar"; }
  int horizon() const override { return h; }
  int history() const override { return std::max(P, Q); }
  Mat predict_one(std::span<const Mat> past_x, std::span<const Vec> past_z) const override;
  nlohmann::json to_json() const override;

  int P = 0;
  int Q = 0;
  int h = 1;
  Mat alpha;                // M x N
  std::vector<Mat> beta;    // P blocks, M x N
  std::vector<Mat> gamma;   // Q blocks, S x D, row u = i + j M
  Mat sigma2;               // M x N residual variances
  int ridge_fallbacks = 0;  // pixels whose design was rank deficient
};

PixelAr fit_pixel_ar(const MatrixSeries& series, int P, int Q, int horizon = 1, int jobs = 1);

// Least squares of vec(X_t) on stacked lagged vec(X) and z, no intercept,
// ridge 1e-8 (1 + tr(G)/k) on the Gram G of the k predictors.
class Varx : public Forecaster {
 public:
  std::string kind() const override { return "varx"; }
  int horizon() const override { return h; }
  int history() const override { return std::max(P, Q); }
  Mat predict_one(std::span<const Mat> past_x, std::span<const Vec> past_z) const override;
  nlohmann::json to_json() const override;

  int P = 0;
  int Q = 0;
  int h = 1;
  int rows = 0;
  int cols = 0;
  Mat coef;  // S x (S P + D Q)
  double ridge = 0.0;
  // Predictor count is at least half the number of target frames.
  bool underdetermined_warning = false;
};

// Throws InsufficientDataError (suggesting MARAC) when predictors >= frames.
Varx fit_varx(const MatrixSeries& series, int P, int Q, int horizon = 1);

// Repeats the newest observed frame at every latency.
class Persistence : public Forecaster {
 public:
  explicit Persistence(int horizon = 1) : h_(horizon) {}
  std::string kind() const override { return "persistence"; }
  int horizon() const override { return h_; }
  int history() const override { return 1; }
  Mat predict_one(std::span<const Mat> past_x, std::span<const Vec> past_z) const override;
  nlohmann::json to_json() const override;

 private:
  int h_;
};

// X_{t-1}, for any h.
Mat persistence(const MatrixSeries& series, std::size_t t, int h);

// Inverse of Forecaster::to_json, dispatching on "kind".
std::unique_ptr<Forecaster> forecaster_from_json(const nlohmann::json& j);

}  // namespace marac
