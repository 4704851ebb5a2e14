#include "marac/errors.hpp"
#include "marac/selection.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>

using namespace marac;
using namespace marac::testing;

namespace {

// df_q = tr{[Ktil + lambda (I_D kron Sigma)]^-1 Ktil}, Ktil = C kron K, formed densely.
double dense_df(const MaracModel& m, const MatrixSeries& s, int q, std::size_t first) {
  const int d = s.aux_dim();
  Mat c = Mat::Zero(d, d);
  for (std::size_t t = first; t < s.length(); ++t) c += s.z[t - q] * s.z[t - q].transpose();
  c /= static_cast<double>(s.length() - first);
  const Mat ktil = kron(c, m.kernel->gram);
  const Mat sigma = kron(Mat::Identity(d, d), kron(m.sigma_c, m.sigma_r));
  return (ktil + m.lambda * sigma).lu().solve(ktil).trace();
}

MaracModel fitted(const SimBundle& b, int P, int Q, double lambda) {
  FitOptions opts;
  opts.lambda = lambda;
  return fit(b.series, P, Q, b.truth.model.kernel, opts).model;
}

}  // namespace

TEST_CASE("effective df matches the dense trace oracle") {
  const SimBundle b = small_bundle(3, 4, 2, 1, 2, 150, 3);
  MaracModel m = fitted(b, 1, 2, 0.05);
  for (const double lambda : {1e-3, 0.05, 2.0}) {
    m.lambda = lambda;
    const EffectiveDf df = effective_df(m, b.series);
    REQUIRE(df.per_lag.size() == 2);
    for (int q = 1; q <= 2; ++q)
      CHECK(df.per_lag[q - 1] == doctest::Approx(dense_df(m, b.series, q, m.first_target())).epsilon(1e-8));
    const double structural = 1 * (9 + 16 - 1) + (9 + 16);
    CHECK(df.total == doctest::Approx(structural + df.per_lag[0] + df.per_lag[1]));
  }
}

TEST_CASE("effective df limits and monotonicity") {
  const SimBundle b = small_bundle(3, 3, 2, 1, 1, 200, 4);
  MaracModel m = fitted(b, 1, 1, 0.01);
  m.lambda = 1e-10;
  CHECK(std::abs(effective_df(m, b.series).per_lag[0] - 18.0) <= 0.1);
  m.lambda = 1e12;
  CHECK(effective_df(m, b.series).per_lag[0] <= 1e-6);
  double prev = 1e300;
  for (double lambda = 1e-8; lambda < 1e4; lambda *= 3.0) {
    m.lambda = lambda;
    const double df = effective_df(m, b.series).per_lag[0];
    CHECK(df <= prev + 1e-9);
    CHECK(df >= 0.0);
    CHECK(df <= 18.0);
    prev = df;
  }
}

TEST_CASE("truncated effective df is bounded by R D") {
  const SimBundle b = small_bundle(3, 3, 2, 1, 1, 200, 5);
  FitOptions opts;
  opts.lambda = 1e-8;
  opts.truncation_rank = 4;
  const MaracModel m = fit(b.series, 1, 1, b.truth.model.kernel, opts).model;
  const double df = effective_df(m, b.series).per_lag[0];
  CHECK(df <= 8.0 + 1e-9);
  CHECK(df >= 7.9);
}

TEST_CASE("log-likelihood sum is minus the frame count times the averaged loss") {
  const SimBundle b = small_bundle(3, 3, 2, 1, 1, 100, 6);
  const MaracModel m = fitted(b, 1, 1, 0.01);
  const std::size_t first = 3;
  const double frames = static_cast<double>(b.series.length() - first);
  CHECK(log_likelihood_sum(m, b.series, first) ==
        doctest::Approx(-frames * neg_log_likelihood(m, b.series, first)));
  const double df = effective_df(m, b.series, first).total;
  const double ll = log_likelihood_sum(m, b.series, first);
  CHECK(aic(m, b.series, first) == doctest::Approx(-2.0 * ll + 2.0 * df));
  CHECK(bic(m, b.series, first) == doctest::Approx(-2.0 * ll + std::log(frames) * df));
}

TEST_CASE("information criteria formulas") {
  CHECK(aic(-100.0, 0.0) == 200.0);
  CHECK(bic(-100.0, 0.0, 50) == 200.0);
  CHECK(aic(-100.0, 5.0) == 210.0);
  CHECK(bic(-100.0, 5.0, 100) == doctest::Approx(200.0 + 5.0 * std::log(100.0)));
  CHECK(aic(-10.0, 3.0) < aic(-10.0, 4.0));
  CHECK(bic(-10.0, 3.0, 20) < bic(-10.0, 4.0, 20));
}

TEST_CASE("argmin breaks ties toward smaller P + Q, then smaller P") {
  auto cell = [](int p, int q, double score) {
    SelectionCell c;
    c.P = p;
    c.Q = q;
    c.ok = true;
    c.bic = score;
    return c;
  };
  std::vector<SelectionCell> cells{cell(2, 1, 1.0), cell(1, 2, 1.0), cell(0, 2, 1.0), cell(2, 2, 0.5)};
  CHECK(*argmin_cell(cells, &SelectionCell::bic) == 3);
  cells[3].bic = 1.0;
  CHECK(*argmin_cell(cells, &SelectionCell::bic) == 2);
  cells[2].ok = false;
  CHECK(*argmin_cell(cells, &SelectionCell::bic) == 1);
  std::reverse(cells.begin(), cells.end());
  CHECK(cells[*argmin_cell(cells, &SelectionCell::bic)].P == 1);
  for (auto& c : cells) c.ok = false;
  CHECK_FALSE(argmin_cell(cells, &SelectionCell::bic).has_value());
}

TEST_CASE("single-cell grid chooses that cell") {
  const SimBundle b = small_bundle(3, 3, 2, 1, 1, 120, 7);
  SelectOptions so;
  so.p_min = so.p_max = 1;
  so.q_min = so.q_max = 1;
  const SelectionResult r = select_lags(b.series, b.truth.model.kernel, so);
  REQUIRE(r.cells.size() == 1);
  CHECK(*r.chosen_bic == std::make_pair(1, 1));
  CHECK(*r.chosen_aic == std::make_pair(1, 1));
}

TEST_CASE("all cells share one conditioning horizon and Qmax = 0 sweeps MAR only") {
  const SimBundle b = small_bundle(3, 3, 2, 1, 1, 120, 8);
  SelectOptions so;
  so.p_max = 2;
  so.q_max = 0;
  so.fit.lambda = 0.01;
  const SelectionResult r = select_lags(b.series, b.truth.model.kernel, so);
  CHECK(r.cells.size() == 3);
  CHECK(r.first_target == 2);
  for (const auto& c : r.cells) CHECK(c.Q == 0);
  CHECK(r.chosen_bic->second == 0);
}

TEST_CASE("cell failures are recorded, not fatal") {
  const SimBundle b = small_bundle(3, 3, 2, 1, 1, 7, 9);
  SelectOptions so;
  so.p_max = 1;
  so.q_max = 1;
  so.fit.lambda = 0.0;  // exact mode needs lambda > 0 once Q > 0
  const SelectionResult r = select_lags(b.series, b.truth.model.kernel, so);
  int failed = 0;
  for (const auto& c : r.cells) {
    if (!c.ok) {
      ++failed;
      CHECK_FALSE(c.error.empty());
      CHECK(c.Q > 0);
    }
  }
  CHECK(failed == 2);
  REQUIRE(r.chosen_bic.has_value());
  CHECK(r.chosen_bic->second == 0);
}

TEST_CASE("sweep order does not change criterion values") {
  const SimBundle b = small_bundle(3, 3, 2, 1, 1, 150, 10);
  SelectOptions so;
  so.p_max = 1;
  so.q_max = 1;
  so.fit.lambda = 0.01;
  const SelectionResult serial = select_lags(b.series, b.truth.model.kernel, so);
  so.jobs = 3;
  const SelectionResult parallel = select_lags(b.series, b.truth.model.kernel, so);
  REQUIRE(serial.cells.size() == parallel.cells.size());
  for (std::size_t i = 0; i < serial.cells.size(); ++i) {
    CHECK(serial.cells[i].bic == parallel.cells[i].bic);
    CHECK(serial.cells[i].aic == parallel.cells[i].aic);
  }
}

TEST_CASE("BIC picks Q = 0 on data without covariate effects") {
  int hits = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    SimConfig cfg;
    cfg.M = 4;
    cfg.N = 4;
    cfg.D = 3;
    cfg.P = 1;
    cfg.Q = 0;
    cfg.T_train = 600;
    cfg.T_val = 200;
    cfg.seed = 900 + seed;
    const SimBundle b = simulate(cfg);
    SelectOptions so;
    so.p_min = 1;
    so.p_max = 1;
    so.q_max = 2;
    so.lambda_grid = {1e-4, 1e-3, 1e-2, 1e-1, 1.0};
    so.split = b.split;
    const SelectionResult r = select_lags(b.series, b.truth.model.kernel, so);
    hits += r.chosen_bic && r.chosen_bic->second == 0;
  }
  CHECK(hits >= 14);
}
