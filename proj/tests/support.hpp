#pragma once

// Shared fixtures for the unit tests: small random series and a central
// difference gradient used as an oracle against the analytic updates.

#include "marac/estimator.hpp"
#include "marac/simulator.hpp"

#include <functional>

namespace marac::testing {

inline Mat random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  std::normal_distribution<double> nd;
  Mat m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = nd(rng);
  }
  return m;
}

inline Mat random_spd(Eigen::Index n, Rng& rng) {
  const Mat g = random_matrix(n, n, rng);
  return g * g.transpose() / static_cast<double>(n) + Mat::Identity(n, n);
}

// MARAC(P, Q) data on an M x N planar grid from the simulator.
inline SimBundle small_bundle(int M, int N, int D, int P, int Q, std::size_t T, std::uint64_t seed) {
  SimConfig cfg;
  cfg.M = M;
  cfg.N = N;
  cfg.D = D;
  cfg.P = P;
  cfg.Q = Q;
  cfg.T_train = T;
  cfg.seed = seed;
  cfg.band_width = 1;
  return simulate(cfg);
}

// Model with random blocks, random SPD covariances and random auxiliary
// coefficients, for checking the updates from an arbitrary state.
inline MaracModel random_model(const MatrixSeries& s, int P, int Q, std::shared_ptr<const KernelContext> ctx,
                               double lambda, Rng& rng, std::optional<int> rank = std::nullopt) {
  FitOptions opts;
  opts.lambda = lambda;
  opts.truncation_rank = rank;
  MaracModel m = initial_model(s.rows(), s.cols(), s.aux_dim(), P, Q, ctx, opts);
  for (int p = 0; p < P; ++p) {
    m.A[p] = 0.3 * random_matrix(s.rows(), s.rows(), rng);
    m.B[p] = 0.3 * random_matrix(s.cols(), s.cols(), rng);
  }
  for (auto& g : m.aux) g = 0.1 * random_matrix(g.rows(), g.cols(), rng);
  m.sigma_r = random_spd(s.rows(), rng);
  m.sigma_c = random_spd(s.cols(), rng);
  return m;
}

// Central differences of f at x, step h per entry.
inline Mat numeric_gradient(const std::function<double(const Mat&)>& f, const Mat& x, double h = 1e-6) {
  Mat g(x.rows(), x.cols());
  Mat work = x;
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const double orig = work(i, j);
      work(i, j) = orig + h;
      const double up = f(work);
      work(i, j) = orig - h;
      const double down = f(work);
      work(i, j) = orig;
      g(i, j) = (up - down) / (2.0 * h);
    }
  }
  return g;
}

}  // namespace marac::testing
