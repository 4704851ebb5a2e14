#pragma once

// Synthetic MARAC(P, Q) data: banded stationary autoregressive factors,
// Gaussian-process auxiliary coefficients, a VAR(1) covariate series and
// Kronecker-structured Gaussian noise.

#include "marac/estimator.hpp"

#include <cstdint>
#include <random>

namespace marac {

using Rng = std::mt19937_64;

// Independent stream `stream` derived from `seed`.
Rng make_rng(std::uint64_t seed, std::uint64_t stream);

enum class NoiseKind { banded, identity, diagonal };

struct SimConfig {
  int M = 5;
  int N = 5;
  int D = 3;
  int P = 1;
  int Q = 1;
  std::size_t T_train = 1000;
  std::size_t T_val = 0;
  std::size_t T_test = 0;
  int band_width = 2;
  double target_radius = 0.8;
  // Weight of lag p relative to lag 1 before the joint rescale.
  double lag_decay = 0.5;
  // Auxiliary VAR(1) coefficient; empty means 0.5 I_D.
  Mat aux_coef;
  NoiseKind noise = NoiseKind::banded;
  double noise_offdiag = 0.3;
  // Multiplies the Gaussian-process draws.
  double signal_scale = 1.0;
  GridSpec grid;  // defaults to the planar M x N grid when empty
  Kernel kernel = PlanarProductKernel{};
  std::uint64_t seed = 0;
  std::size_t burn_in = 200;

  std::size_t total() const { return T_train + T_val + T_test; }
  void validate() const;
};

struct SimTruth {
  // Exact-mode model with Gamma_q = K^-1 G_q; its kernel context is the
  // simulation kernel.
  MaracModel model;
  std::vector<Mat> g;  // G_q, S x D, column d = g_{q,d} on the grid
  Mat aux_coef;
  // Mean of diag(Sigma_c (x) Sigma_r).
  double noise_variance = 1.0;
};

struct SimBundle {
  MatrixSeries series;
  Split split;  // train [0, train_end), validation [train_end, val_end), test after
  SimTruth truth;
};

// Symmetric matrix, nonzero only for |i - j| <= band, spectral radius = target.
Mat gen_banded_stationary(int size, int band, double target, Rng& rng);

// Jointly rescaled banded pairs whose {kron(B_p, A_p)} companion radius equals
// target within 1e-6. Lag p starts with weight decay^(p-1).
std::vector<std::pair<Mat, Mat>> gen_banded_pairs(int rows, int cols, int lags, int band, double target,
                                                  double decay, Rng& rng);

// `count` vectors Chol(K) xi with xi standard normal.
std::vector<Vec> gen_gp_functions(const Mat& gram, int count, Rng& rng);

// z_t = C z_{t-1} + nu_t from z = 0, first `burn_in` draws discarded.
std::vector<Vec> gen_var1(const Mat& coef, std::size_t length, std::size_t burn_in, Rng& rng);

// L_r Z L_c^T, so vec(E) ~ N(0, Sigma_c (x) Sigma_r).
Mat sample_noise(const Mat& chol_r, const Mat& chol_c, Rng& rng);

Mat noise_covariance(NoiseKind kind, int size, double offdiag, Rng& rng);

// Throws StationarityError when the drawn truth is not stationary.
SimBundle simulate(const SimConfig& config);

}  // namespace marac
