#include "marac/simulator.hpp"

#include "marac/errors.hpp"
#include "marac/stationarity.hpp"

#include <cmath>
#include <string>

namespace marac {

namespace {

Mat standard_normal(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  std::normal_distribution<double> nd;
  Mat out(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) out(i, j) = nd(rng);
  }
  return out;
}

}  // namespace

Rng make_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return Rng(seq);
}

void SimConfig::validate() const {
  if (M < 1 || N < 1 || D < 0 || P < 0 || Q < 0) throw ContractError("SimConfig: shapes must be positive");
  if (Q > 0 && D < 1) throw ContractError("SimConfig: Q > 0 needs D >= 1");
  if (!(target_radius >= 0.0)) throw ContractError("SimConfig: target_radius must be >= 0");
  if (!(target_radius < 1.0)) {
    throw StationarityError("SimConfig: target_radius " + std::to_string(target_radius) +
                            " is not below 1, the series would not be stationary");
  }
  if (band_width < 0) throw ContractError("SimConfig: band_width must be >= 0");
  if (T_train < 1) throw ContractError("SimConfig: T_train must be >= 1");
  if (aux_coef.size() > 0 && (aux_coef.rows() != D || aux_coef.cols() != D)) {
    throw ShapeError("SimConfig: aux_coef must be D x D");
  }
  if (!grid.locations.empty() && (grid.rows != M || grid.cols != N)) throw ShapeError("SimConfig: grid shape differs");
}

Mat gen_banded_stationary(int size, int band, double target, Rng& rng) {
  if (size < 1 || band < 0 || (band >= size && band > 0))
    throw ContractError("gen_banded_stationary: need 0 <= band < size");
  std::uniform_real_distribution<double> ud(-1.0, 1.0);
  Mat a = Mat::Zero(size, size);
  for (int i = 0; i < size; ++i) {
    for (int j = i; j < size && j - i <= band; ++j) a(i, j) = a(j, i) = ud(rng);
  }
  const double rho = spectral_radius(a);
  if (rho <= 0.0) {
    a.setIdentity();
    return a * target;
  }
  return a * (target / rho);
}

std::vector<std::pair<Mat, Mat>> gen_banded_pairs(int rows, int cols, int lags, int band, double target,
                                                  double decay, Rng& rng) {
  std::vector<std::pair<Mat, Mat>> pairs;
  if (lags == 0) return pairs;
  const double root = std::sqrt(target);
  for (int p = 0; p < lags; ++p) {
    const double w = std::sqrt(std::pow(decay, p));
    pairs.emplace_back(gen_banded_stationary(rows, std::min(band, rows - 1), root * w, rng),
                       gen_banded_stationary(cols, std::min(band, cols - 1), root * w, rng));
  }
  if (lags == 1) return pairs;
  // Common factor s on every kron(B_p, A_p), found by bisection.
  auto radius = [&](double s) {
    std::vector<Mat> blocks;
    for (const auto& [a, b] : pairs) blocks.push_back(s * kron(b, a));
    return companion_radius(blocks);
  };
  double lo = 0.0;
  double hi = 1.0;
  while (radius(hi) < target) hi *= 2.0;
  for (int it = 0; it < 200 && hi - lo > 1e-14; ++it) {
    const double mid = 0.5 * (lo + hi);
    (radius(mid) < target ? lo : hi) = mid;
  }
  const double s = std::sqrt(0.5 * (lo + hi));
  for (auto& [a, b] : pairs) {
    a *= s;
    b *= s;
  }
  return pairs;
}

std::vector<Vec> gen_gp_functions(const Mat& gram, int count, Rng& rng) {
  const Mat l = spd_cholesky(gram);
  std::vector<Vec> out;
  for (int i = 0; i < count; ++i) out.push_back(l * standard_normal(gram.rows(), 1, rng).col(0));
  return out;
}

std::vector<Vec> gen_var1(const Mat& coef, std::size_t length, std::size_t burn_in, Rng& rng) {
  if (coef.rows() != coef.cols()) throw ShapeError("gen_var1: coefficient must be square");
  if (coef.size() > 0 && spectral_radius(coef) >= 1.0) throw ContractError("gen_var1: coefficient is not stationary");
  const Eigen::Index d = coef.rows();
  Vec z = Vec::Zero(d);
  std::vector<Vec> out;
  out.reserve(length);
  for (std::size_t t = 0; t < burn_in + length; ++t) {
    z = coef * z + standard_normal(d, 1, rng).col(0);
    if (t >= burn_in) out.push_back(z);
  }
  return out;
}

Mat sample_noise(const Mat& chol_r, const Mat& chol_c, Rng& rng) {
  return chol_r * standard_normal(chol_r.rows(), chol_c.rows(), rng) * chol_c.transpose();
}

Mat noise_covariance(NoiseKind kind, int size, double offdiag, Rng& rng) {
  Mat s = Mat::Identity(size, size);
  switch (kind) {
    case NoiseKind::identity:
      break;
    case NoiseKind::banded:
      for (int i = 0; i + 1 < size; ++i) s(i, i + 1) = s(i + 1, i) = offdiag;
      break;
    case NoiseKind::diagonal: {
      std::uniform_real_distribution<double> ud(0.5, 1.5);
      for (int i = 0; i < size; ++i) s(i, i) = ud(rng);
      break;
    }
  }
  return s;
}

SimBundle simulate(const SimConfig& config) {
  config.validate();
  const int m = config.M;
  const int n = config.N;
  const int d = config.D;
  Rng coef_rng = make_rng(config.seed, 0);
  Rng gp_rng = make_rng(config.seed, 1);
  Rng z_rng = make_rng(config.seed, 2);
  Rng noise_rng = make_rng(config.seed, 3);

  SimBundle out;
  SimTruth& truth = out.truth;
  MaracModel& model = truth.model;
  model.P = config.P;
  model.Q = config.Q;
  model.mode = AuxMode::exact;
  model.horizon = 1;
  for (auto& [a, b] : gen_banded_pairs(m, n, config.P, config.band_width, config.target_radius, config.lag_decay,
                                       coef_rng)) {
    model.A.push_back(std::move(a));
    model.B.push_back(std::move(b));
  }
  model.sigma_r = noise_covariance(config.noise, m, config.noise_offdiag, coef_rng);
  model.sigma_c = noise_covariance(config.noise, n, config.noise_offdiag, coef_rng);
  truth.noise_variance = model.sigma_r.diagonal().mean() * model.sigma_c.diagonal().mean();
  truth.aux_coef = config.aux_coef.size() > 0 ? config.aux_coef : Mat(0.5 * Mat::Identity(d, d));

  GridSpec grid = config.grid.locations.empty() ? GridSpec::planar(m, n) : config.grid;
  auto ctx = std::make_shared<const KernelContext>(make_kernel_context(std::move(grid), config.kernel));
  model.kernel = ctx;
  if (config.Q > 0) {
    const auto draws = gen_gp_functions(ctx->gram, config.Q * d, gp_rng);
    for (int q = 0; q < config.Q; ++q) {
      Mat g(m * n, d);
      for (int j = 0; j < d; ++j) g.col(j) = config.signal_scale * draws[static_cast<std::size_t>(q * d + j)];
      model.aux.push_back(spd_solve(ctx->gram, g));
      truth.g.push_back(std::move(g));
    }
  }
  model.validate();

  std::vector<std::pair<Mat, Mat>> ab;
  for (int p = 0; p < config.P; ++p) ab.emplace_back(model.A[p], model.B[p]);
  const auto verdict = check_stationarity(ab, d > 0 ? std::vector<Mat>{truth.aux_coef} : std::vector<Mat>{});
  if (!verdict.stationary) {
    throw StationarityError("simulate: truth is not stationary (radius " + std::to_string(verdict.marac_radius) +
                            ", auxiliary radius " + std::to_string(verdict.aux_radius) + ")");
  }

  const std::size_t total = config.total();
  const std::size_t steps = config.burn_in + total;
  const std::vector<Vec> z = gen_var1(truth.aux_coef, steps, config.burn_in, z_rng);
  const Mat lr = spd_cholesky(model.sigma_r);
  const Mat lc = spd_cholesky(model.sigma_c);
  std::vector<Mat> x(steps, Mat::Zero(m, n));
  for (std::size_t t = 0; t < steps; ++t) {
    Mat frame = sample_noise(lr, lc, noise_rng);
    for (int p = 1; p <= config.P; ++p) {
      if (t < static_cast<std::size_t>(p)) break;
      frame.noalias() += model.A[p - 1] * x[t - p] * model.B[p - 1].transpose();
    }
    for (int q = 1; q <= config.Q; ++q) {
      if (t < static_cast<std::size_t>(q)) break;
      frame += unvec(truth.g[q - 1] * z[t - q], m, n);
    }
    x[t] = std::move(frame);
  }
  out.series.x.assign(x.begin() + static_cast<std::ptrdiff_t>(config.burn_in), x.end());
  out.series.z.assign(z.begin() + static_cast<std::ptrdiff_t>(config.burn_in), z.end());
  out.split.train_end = config.T_train;
  out.split.val_end = config.T_train + config.T_val;
  return out;
}

}  // namespace marac
