#pragma once

#include "marac/kernels.hpp"
#include "marac/linalg.hpp"

#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <vector>

namespace marac {

// T frames of an M x N matrix with a D-dimensional auxiliary vector per frame.
// D may be zero for series without covariates.
struct MatrixSeries {
  std::vector<Mat> x;
  std::vector<Vec> z;
  std::vector<double> timestamps;  // empty, or one per frame

  std::size_t length() const { return x.size(); }
  int rows() const { return x.empty() ? 0 : static_cast<int>(x.front().rows()); }
  int cols() const { return x.empty() ? 0 : static_cast<int>(x.front().cols()); }
  int aux_dim() const { return z.empty() ? 0 : static_cast<int>(z.front().size()); }

  // Throws ShapeError / ContractError when frames disagree or are non-finite.
  void validate() const;

  // Frames [begin, end).
  MatrixSeries slice(std::size_t begin, std::size_t end) const;
};

enum class AuxMode { exact, truncated };

// MARAC(P, Q) coefficients. `aux[q-1]` holds the representer coefficients
// Gamma_q (S x D) in exact mode or the truncated coefficients Theta_q (R x D).
// `horizon` is the target offset h: predictors at frames t-1, t-2, ...
// forecast frame t + h - 1.
struct MaracModel {
  int P = 0;
  int Q = 0;
  std::vector<Mat> A;
  std::vector<Mat> B;
  AuxMode mode = AuxMode::exact;
  std::vector<Mat> aux;
  Mat sigma_r;
  Mat sigma_c;
  double lambda = 0.0;
  std::shared_ptr<const KernelContext> kernel;
  bool diag_sigma = false;
  int horizon = 1;

  int rows() const { return static_cast<int>(sigma_r.rows()); }
  int cols() const { return static_cast<int>(sigma_c.rows()); }
  int aux_dim() const { return aux.empty() ? 0 : static_cast<int>(aux.front().cols()); }
  int max_lag() const { return P > Q ? P : Q; }
  // First frame index with a complete predictor history.
  std::size_t first_target() const { return static_cast<std::size_t>(max_lag() + horizon - 1); }

  void validate() const;

  // S x D matrix whose column d is vec of slice d of the lag-`lag` tensor
  // coefficient, i.e. the transpose of its mode-3 matricization. lag is 1-based.
  Mat coeff_matrix(int lag) const;
  Tensor3 coeff_tensor(int lag) const;
};

// Prediction from the most recent frames: past_x.back() is the frame right
// before the forecast origin.
Mat predict_one(const MaracModel& model, std::span<const Mat> past_x, std::span<const Vec> past_z);

// Direct latency-h forecast of frame t + h - 1 from frames before t.
Mat forecast_latency(const MaracModel& model, const MatrixSeries& series, std::size_t t, int h);

// X_t minus its prediction. t must be >= model.first_target().
Mat residual(const MaracModel& model, const MatrixSeries& series, std::size_t t);

// Averaged negative conditional log-likelihood (constants dropped) over target
// frames [first, T). `first` defaults to model.first_target().
double neg_log_likelihood(const MaracModel& model, const MatrixSeries& series,
                          std::optional<std::size_t> first = std::nullopt);

// (lambda/2) sum_q tr(Gamma_q^T K Gamma_q), or tr(Theta_q^T Lambda_R^-1 Theta_q)
// in truncated mode.
double penalty(const MaracModel& model);

// neg_log_likelihood + penalty.
double penalized_objective(const MaracModel& model, const MatrixSeries& series,
                           std::optional<std::size_t> first = std::nullopt);

}  // namespace marac
