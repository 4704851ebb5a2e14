#pragma once

// Penalized maximum likelihood for MARAC(P, Q) by alternating exact block
// minimization: A_1 -> B_1 -> ... -> A_P -> B_P -> Gamma_1 -> ... -> Gamma_Q
// -> Sigma_r -> Sigma_c, repeated until the coefficient changes are small.

#include "marac/model.hpp"

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace marac {

struct FitOptions {
  double lambda = 1e-2;
  int max_iters = 200;
  double rel_tol = 1e-4;
  // nullopt: exact representer solve; otherwise the truncated basis rank R.
  std::optional<int> truncation_rank;
  bool diag_sigma = false;
  std::optional<MaracModel> warm_start;
  // The fit is deterministic; the seed is carried for provenance only.
  std::uint64_t seed = 0;
  // Target offset h for direct latency-h fitting.
  int horizon = 1;
  // First target frame; defaults to max(P, Q) + h - 1. Lag selection sets it
  // to a common value for every candidate.
  std::optional<std::size_t> first_target;
};

struct BlockGradientNorms {
  std::vector<double> a;
  std::vector<double> b;
  std::vector<double> aux;
};

struct FitReport {
  // Penalized objective before the first sweep and after every sweep.
  std::vector<double> objective_trace;
  // Largest relative coefficient change of every sweep.
  std::vector<double> max_block_change;
  int iters_run = 0;
  bool converged = false;
  BlockGradientNorms gradient_norms;
  double df_total = 0.0;
  std::vector<double> df_per_lag;
  double gram_decay_exponent = 0.0;
  double seconds = 0.0;
};

struct FitResult {
  MaracModel model;
  FitReport report;
};

// Working state of the alternating minimization over one series. Keeps the
// full residual of every target frame in sync with the current blocks, so
// each update_* is an exact minimizer of the penalized objective over its
// block given all others.
class BlockState {
 public:
  // `series` must outlive the state. Target frames are [first_target, T).
  BlockState(const MatrixSeries& series, MaracModel model, std::optional<std::size_t> first_target = std::nullopt);

  const MaracModel& model() const { return model_; }
  std::size_t first_target() const { return first_; }
  std::size_t frames() const { return resid_.size(); }

  Mat update_A(int p);
  Mat update_B(int p);
  // Exact mode: vec(Gamma_q). Solves the S*D system directly when S*D <= 4000,
  // otherwise sweeps the D per-covariate blocks once.
  Vec update_gamma(int q);
  // Truncated mode: vec(Theta_q) from the R*D ridge system.
  Vec update_theta(int q);
  // Dispatches to update_gamma / update_theta by model mode.
  Vec update_aux(int q);
  std::pair<Mat, Mat> update_sigma();

  void set_A(int p, Mat a);
  void set_B(int p, Mat b);
  void set_aux(int q, Mat coef);
  void set_sigma(Mat sigma_r, Mat sigma_c);
  void set_lambda(double lambda);

  double objective() const;
  double neg_log_likelihood() const;

  // Analytic gradients of the penalized objective.
  Mat gradient_A(int p) const;
  Mat gradient_B(int p) const;
  Mat gradient_aux(int q) const;

  const Mat& residual(std::size_t k) const { return resid_[k]; }

 private:
  const Mat& lagged_x(std::size_t k, int lag) const;
  const Vec& lagged_z(std::size_t k, int lag) const;
  Mat lagged_z_matrix(int lag) const;
  Mat residual_matrix() const;
  void store_residual_matrix(const Mat& rmat);
  void recompute_residuals();
  void refresh_inverses();
  void refresh_aux_cache(int q);

  const MatrixSeries& series_;
  MaracModel model_;
  std::size_t first_;
  std::size_t shift_;  // horizon - 1
  std::vector<Mat> resid_;
  std::vector<Mat> aux_cache_;  // coeff_matrix(q) for every lag
  Mat sr_inv_;
  Mat sc_inv_;
};

// The default starting point: A_p = I/||I||_F, B_p = (0.5/P) I, zero
// auxiliary coefficients, identity covariances.
MaracModel initial_model(int rows, int cols, int aux_dim, int P, int Q,
                         std::shared_ptr<const KernelContext> kernel, const FitOptions& opts);

// Rescales every (A_p, B_p) so that ||A_p||_F = 1 and trace(A_p) >= 0
// leaving kron(B_p, A_p) unchanged.
MaracModel enforce_identifiability(MaracModel model);

// Throws InsufficientDataError, ContractError, SingularityError, or
// InternalError when the objective increases on two consecutive sweeps.
FitResult fit(const MatrixSeries& series, int P, int Q, std::shared_ptr<const KernelContext> kernel,
              const FitOptions& opts);

struct Split {
  std::size_t train_end = 0;
  std::size_t val_end = 0;
};

// Root mean squared one-step (or latency-h) prediction error over target
// frames [begin, end), using the full series for history.
double prediction_rmse(const MaracModel& model, const MatrixSeries& series, std::size_t begin, std::size_t end);

struct LambdaSearch {
  double best_lambda = 0.0;
  std::vector<double> lambdas;
  std::vector<double> validation_rmse;
  std::vector<bool> converged;
  MaracModel best_model;
};

// Fits on [0, train_end) for every lambda (warm-starting along the grid)
// and scores one-step prediction RMSE on [train_end, val_end). Ties go to
// the larger lambda.
LambdaSearch tune_lambda(const MatrixSeries& series, int P, int Q, std::shared_ptr<const KernelContext> kernel,
                         const std::vector<double>& lambda_grid, const Split& split, FitOptions opts);

}  // namespace marac
