#pragma once

// Effective degrees of freedom of a fitted model, information criteria and
// the (P, Q) sweep built on them.

#include "marac/estimator.hpp"

#include <optional>
#include <string>
#include <vector>

namespace marac {

struct EffectiveDf {
  double total = 0.0;
  std::vector<double> per_lag;  // df_q, q = 1..Q
};

// df_total = P (M^2 + N^2 - 1) + (M^2 + N^2) + sum_q df_q where df_q is the
// trace of the kernel ridge hat operator of lag q. Covariate second moments
// are averaged over target frames [first, T).
EffectiveDf effective_df(const MaracModel& model, const MatrixSeries& series,
                         std::optional<std::size_t> first = std::nullopt);

// Sum of conditional log-likelihoods over target frames [first, T), without
// the 2*pi constant.
double log_likelihood_sum(const MaracModel& model, const MatrixSeries& series,
                          std::optional<std::size_t> first = std::nullopt);

double aic(double loglik_sum, double df);
double bic(double loglik_sum, double df, std::size_t frames);
double aic(const MaracModel& model, const MatrixSeries& series, std::optional<std::size_t> first = std::nullopt);
double bic(const MaracModel& model, const MatrixSeries& series, std::optional<std::size_t> first = std::nullopt);

struct SelectionCell {
  int P = 0;
  int Q = 0;
  bool ok = false;
  std::string error;
  double lambda = 0.0;
  double df = 0.0;
  double nll = 0.0;  // averaged, as in neg_log_likelihood
  double aic = 0.0;
  double bic = 0.0;
  bool converged = false;
};

struct SelectionResult {
  std::vector<SelectionCell> cells;
  std::optional<std::pair<int, int>> chosen_aic;
  std::optional<std::pair<int, int>> chosen_bic;
  std::size_t first_target = 0;
};

struct SelectOptions {
  int p_min = 0;
  int p_max = 0;
  int q_min = 0;
  int q_max = 0;
  FitOptions fit;
  // With a grid and split, lambda is tuned once at (p_max, q_max) and shared,
  // or per candidate when `tune_each` is set. Without, fit.lambda is used.
  std::vector<double> lambda_grid;
  std::optional<Split> split;
  bool tune_each = false;
  int jobs = 1;
};

// Fits every (P, Q) in [p_min..p_max] x [q_min..q_max] on a common target
// window starting at max(p_max, q_max) + h - 1. Fit failures are kept in the
// cell and skipped when choosing. Ties go to smaller P + Q, then smaller P.
SelectionResult select_lags(const MatrixSeries& series, std::shared_ptr<const KernelContext> kernel,
                            const SelectOptions& opts);

// Index of the minimizing ok cell under `score`, or nullopt.
std::optional<std::size_t> argmin_cell(const std::vector<SelectionCell>& cells, double SelectionCell::*score);

}  // namespace marac
