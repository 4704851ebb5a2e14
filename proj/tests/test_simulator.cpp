#include "marac/errors.hpp"
#include "marac/simulator.hpp"
#include "marac/stationarity.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>

using namespace marac;

namespace {

double lag1_autocorrelation(const std::vector<Vec>& z, int d) {
  double mean = 0.0;
  for (const Vec& v : z) mean += v(d);
  mean /= static_cast<double>(z.size());
  double num = 0.0, den = 0.0;
  for (std::size_t t = 0; t < z.size(); ++t) {
    den += (z[t](d) - mean) * (z[t](d) - mean);
    if (t > 0) num += (z[t](d) - mean) * (z[t - 1](d) - mean);
  }
  return num / den;
}

double variance(const std::vector<double>& x) {
  double m = 0.0;
  for (double v : x) m += v;
  m /= static_cast<double>(x.size());
  double s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  return s / static_cast<double>(x.size() - 1);
}

}  // namespace

TEST_CASE("banded stationary factors") {
  Rng rng = make_rng(1, 0);
  const Mat d = gen_banded_stationary(6, 0, 0.7, rng);
  CHECK((d - Mat(d.diagonal().asDiagonal())).norm() == 0.0);
  CHECK(spectral_radius(d) == doctest::Approx(0.7).epsilon(1e-6));
  for (int seed = 0; seed < 5; ++seed) {
    Rng r = make_rng(seed, 0);
    const Mat m = gen_banded_stationary(20, 2, 0.9, r);
    CHECK(spectral_radius(m) == doctest::Approx(0.9).epsilon(1e-6));
    CHECK((m - m.transpose()).norm() == 0.0);
    for (int i = 0; i < 20; ++i)
      for (int j = 0; j < 20; ++j)
        if (std::abs(i - j) > 2) CHECK(m(i, j) == 0.0);
  }
}

TEST_CASE("P = 1 pairs split the radius between the factors") {
  Rng rng = make_rng(2, 0);
  const auto pairs = gen_banded_pairs(4, 5, 1, 1, 0.64, 0.5, rng);
  CHECK(spectral_radius(pairs[0].first) == doctest::Approx(0.8).epsilon(1e-6));
  CHECK(spectral_radius(pairs[0].second) == doctest::Approx(0.8).epsilon(1e-6));
}

TEST_CASE("Gaussian-process draws have the kernel covariance") {
  const KernelContext ctx = make_kernel_context(GridSpec::planar(3, 3), PlanarProductKernel{});
  Rng rng = make_rng(3, 1);
  const auto draws = gen_gp_functions(ctx.gram, 4000, rng);
  for (const auto& [u, v] : {std::pair{0, 0}, std::pair{0, 4}, std::pair{2, 6}}) {
    double acc = 0.0;
    for (const Vec& g : draws) acc += g(u) * g(v);
    acc /= static_cast<double>(draws.size());
    CHECK(acc == doctest::Approx(ctx.gram(u, v)).epsilon(0.1));
  }
  Rng a = make_rng(3, 1), b = make_rng(3, 1);
  CHECK(gen_gp_functions(ctx.gram, 2, a)[1] == gen_gp_functions(ctx.gram, 2, b)[1]);
  const double eps = 1e-8;
  Rng c = make_rng(4, 1);
  for (const Vec& g : gen_gp_functions(eps * Mat::Identity(9, 9), 10, c)) CHECK(g.norm() <= 3.0 * std::sqrt(eps * 9));
}

TEST_CASE("VAR(1) covariates") {
  Rng rng = make_rng(5, 2);
  const std::size_t t = 4000;
  const auto white = gen_var1(Mat::Zero(2, 2), t, 200, rng);
  CHECK(white.size() == t);
  CHECK(std::abs(lag1_autocorrelation(white, 0)) <= 3.0 / std::sqrt(static_cast<double>(t)));
  const auto ar = gen_var1(0.5 * Mat::Identity(2, 2), t, 200, rng);
  CHECK(lag1_autocorrelation(ar, 1) == doctest::Approx(0.5).epsilon(0.1));
  const auto slow = gen_var1(0.99 * Mat::Identity(1, 1), t, 200, rng);
  std::vector<double> xs;
  for (const Vec& v : slow) xs.push_back(v(0));
  CHECK(variance(xs) > 10.0);
  CHECK_THROWS_AS(gen_var1(1.1 * Mat::Identity(2, 2), 10, 0, rng), ContractError);
  Rng a = make_rng(6, 2), b = make_rng(6, 2);
  CHECK(gen_var1(0.5 * Mat::Identity(2, 2), 5, 3, a)[4] == gen_var1(0.5 * Mat::Identity(2, 2), 5, 3, b)[4]);
}

TEST_CASE("Kronecker noise covariance") {
  Mat sr(2, 2), sc(2, 2);
  sr << 1.0, 0.3, 0.3, 1.0;
  sc << 2.0, -0.5, -0.5, 1.0;
  const Mat lr = sr.llt().matrixL();
  const Mat lc = sc.llt().matrixL();
  Rng rng = make_rng(7, 3);
  Mat acc = Mat::Zero(4, 4);
  const int n = 5000;
  for (int i = 0; i < n; ++i) {
    const Vec e = vec(sample_noise(lr, lc, rng));
    acc += e * e.transpose();
  }
  acc /= n;
  const Mat truth = kron(sc, sr);
  for (int i = 0; i < 4; ++i) CHECK(acc(i, i) == doctest::Approx(truth(i, i)).epsilon(0.1));
  CHECK((acc - truth).norm() <= 0.1 * truth.norm());
  Rng a = make_rng(8, 3), b = make_rng(8, 3);
  CHECK(sample_noise(lr, lc, a) == sample_noise(lr, lc, b));
}

TEST_CASE("noise covariance kinds have unit diagonal where specified") {
  Rng rng = make_rng(9, 0);
  const Mat band = noise_covariance(NoiseKind::banded, 5, 0.3, rng);
  CHECK(band(0, 0) == 1.0);
  CHECK(band(0, 1) == 0.3);
  CHECK(band(0, 2) == 0.0);
  CHECK(noise_covariance(NoiseKind::identity, 3, 0.3, rng) == Mat::Identity(3, 3));
  const Mat diag = noise_covariance(NoiseKind::diagonal, 4, 0.3, rng);
  CHECK(diag(0, 1) == 0.0);
  CHECK(diag.diagonal().minCoeff() >= 0.5);
  CHECK(diag.diagonal().maxCoeff() <= 1.5);
}

TEST_CASE("simulated bundles are stationary, centered and split in order") {
  SimConfig cfg;
  cfg.M = 4;
  cfg.N = 3;
  cfg.D = 2;
  cfg.T_train = 3000;
  cfg.T_val = 500;
  cfg.T_test = 500;
  cfg.seed = 10;
  const SimBundle b = simulate(cfg);
  CHECK(b.series.length() == 4000);
  CHECK(b.split.train_end == 3000);
  CHECK(b.split.val_end == 3500);
  std::vector<std::pair<Mat, Mat>> ab{{b.truth.model.A[0], b.truth.model.B[0]}};
  CHECK(check_stationarity(ab, {b.truth.aux_coef}).stationary);
  // Frame mean within 3 standard errors, using the empirical marginal spread.
  Mat mean = Mat::Zero(4, 3);
  for (const Mat& x : b.series.x) mean += x;
  mean /= 4000.0;
  std::vector<double> first_half, second_half;
  for (std::size_t t = 0; t < 4000; ++t) (t < 2000 ? first_half : second_half).push_back(b.series.x[t](1, 1));
  std::vector<double> all = first_half;
  all.insert(all.end(), second_half.begin(), second_half.end());
  const double sd = std::sqrt(variance(all));
  // Positive autocorrelation inflates the standard error; allow for it through the effective sample size.
  CHECK(std::abs(mean(1, 1)) <= 3.0 * sd / std::sqrt(4000.0 / 5.0));
  const double v1 = variance(first_half), v2 = variance(second_half);
  CHECK(std::abs(v1 - v2) <= 0.2 * std::max(v1, v2));
  // Same seed reproduces the bundle.
  CHECK(simulate(cfg).series.x[1234] == b.series.x[1234]);
}

TEST_CASE("truth coefficients forecast with unit RMSE under unit noise") {
  SimConfig cfg;
  cfg.M = 5;
  cfg.N = 5;
  cfg.D = 3;
  cfg.noise = NoiseKind::identity;
  cfg.T_train = 100;
  cfg.T_test = 4000;
  cfg.seed = 11;
  const SimBundle b = simulate(cfg);
  CHECK(b.truth.noise_variance == 1.0);
  const MaracModel& m = b.truth.model;
  double sq = 0.0;
  std::size_t count = 0;
  for (std::size_t t = b.split.val_end; t < b.series.length(); ++t) {
    sq += residual(m, b.series, t).squaredNorm();
    count += 25;
  }
  CHECK(std::sqrt(sq / count) == doctest::Approx(1.0).epsilon(0.05));
  // G = K Gamma reproduces the simulated functions.
  CHECK((m.coeff_matrix(1) - b.truth.g[0]).norm() <= 1e-8 * (1.0 + b.truth.g[0].norm()));
}

TEST_CASE("noiseless contraction without covariate effects") {
  SimConfig cfg;
  cfg.M = 3;
  cfg.N = 3;
  cfg.D = 2;
  cfg.signal_scale = 0.0;
  cfg.T_train = 50;
  const SimBundle b = simulate(cfg);
  MaracModel m = b.truth.model;
  Mat x = Mat::Ones(3, 3);
  const double start = x.norm();
  for (int t = 0; t < 100; ++t) x = m.A[0] * x * m.B[0].transpose();
  CHECK(x.norm() <= start * std::pow(0.8, 100) * 10.0);
}

TEST_CASE("invalid configurations") {
  SimConfig cfg;
  cfg.target_radius = 1.0;
  CHECK_THROWS(simulate(cfg));
  cfg.target_radius = 0.8;
  cfg.M = 0;
  CHECK_THROWS(simulate(cfg));
  Rng rng = make_rng(12, 0);
  CHECK_THROWS_AS(gen_banded_stationary(3, 3, 0.5, rng), ContractError);
  // The configured band is clamped per factor, so small grids keep working.
  cfg.M = 2;
  cfg.N = 2;
  cfg.band_width = 3;
  CHECK_NOTHROW(simulate(cfg));
}
