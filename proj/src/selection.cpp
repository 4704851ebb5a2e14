#include "marac/selection.hpp"

#include "marac/errors.hpp"
#include "marac/parallel.hpp"

#include <cmath>
#include <limits>

namespace marac {

namespace {

// sum_{i,j} a_i b_j / (a_i b_j + lambda); a zero product contributes 0.
double shrunk_trace(const Vec& a, const Vec& b, double lambda) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    for (Eigen::Index j = 0; j < b.size(); ++j) {
      const double v = std::max(0.0, a(i) * b(j));
      if (v > 0.0) total += v / (v + lambda);
    }
  }
  return total;
}

Vec sym_eigenvalues(const Mat& a) {
  Eigen::SelfAdjointEigenSolver<Mat> es(symmetrize(a), Eigen::EigenvaluesOnly);
  return es.eigenvalues();
}

}  // namespace

EffectiveDf effective_df(const MaracModel& model, const MatrixSeries& series, std::optional<std::size_t> first) {
  model.validate();
  const std::size_t t0 = first.value_or(model.first_target());
  if (t0 < model.first_target() || t0 >= series.length()) throw ContractError("effective_df: bad target window");
  const double m = model.rows();
  const double n = model.cols();
  EffectiveDf out;
  out.total = model.P * (m * m + n * n - 1.0) + (m * m + n * n);
  if (model.Q == 0) return out;
  if (model.lambda < 0.0) throw ContractError("effective_df: negative lambda");

  // Whitened kernel spectrum; Sigma = L L^T with L = kron(L_c, L_r).
  Vec mu;
  if (model.mode == AuxMode::exact) {
    const Mat l = kron(spd_cholesky(model.sigma_c), spd_cholesky(model.sigma_r));
    const auto tri = l.triangularView<Eigen::Lower>();
    Mat h = tri.solve(model.kernel->gram);
    h = tri.solve(h.transpose().eval());
    mu = sym_eigenvalues(h);
  } else {
    const Truncation& tr = *model.kernel->truncation;
    const Mat sigma_inv = spd_inverse(kron(model.sigma_c, model.sigma_r));
    const Vec root = tr.eigenvalues.cwiseSqrt();
    const Mat h = root.asDiagonal() * (tr.basis.transpose() * sigma_inv * tr.basis) * root.asDiagonal();
    mu = sym_eigenvalues(h);
  }

  const std::size_t frames = series.length() - t0;
  const std::size_t shift = static_cast<std::size_t>(model.horizon - 1);
  for (int q = 1; q <= model.Q; ++q) {
    Mat c = Mat::Zero(model.aux_dim(), model.aux_dim());
    for (std::size_t t = t0; t < series.length(); ++t) {
      const Vec& z = series.z[t - shift - static_cast<std::size_t>(q)];
      c.noalias() += z * z.transpose();
    }
    c /= static_cast<double>(frames);
    const double df = shrunk_trace(sym_eigenvalues(c), mu, model.lambda);
    out.per_lag.push_back(df);
    out.total += df;
  }
  return out;
}

double log_likelihood_sum(const MaracModel& model, const MatrixSeries& series, std::optional<std::size_t> first) {
  const std::size_t t0 = first.value_or(model.first_target());
  const double frames = static_cast<double>(series.length() - std::min(t0, series.length()));
  return -frames * neg_log_likelihood(model, series, t0);
}

double aic(double loglik_sum, double df) { return -2.0 * loglik_sum + 2.0 * df; }

double bic(double loglik_sum, double df, std::size_t frames) {
  return -2.0 * loglik_sum + std::log(static_cast<double>(frames)) * df;
}

double aic(const MaracModel& model, const MatrixSeries& series, std::optional<std::size_t> first) {
  return aic(log_likelihood_sum(model, series, first), effective_df(model, series, first).total);
}

double bic(const MaracModel& model, const MatrixSeries& series, std::optional<std::size_t> first) {
  const std::size_t t0 = first.value_or(model.first_target());
  return bic(log_likelihood_sum(model, series, first), effective_df(model, series, first).total,
             series.length() - t0);
}

std::optional<std::size_t> argmin_cell(const std::vector<SelectionCell>& cells, double SelectionCell::*score) {
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const auto& c = cells[i];
    if (!c.ok || !std::isfinite(c.*score)) continue;
    if (!best) {
      best = i;
      continue;
    }
    const auto& b = cells[*best];
    const bool better = c.*score < b.*score ||
                        (c.*score == b.*score && (c.P + c.Q < b.P + b.Q || (c.P + c.Q == b.P + b.Q && c.P < b.P)));
    if (better) best = i;
  }
  return best;
}

SelectionResult select_lags(const MatrixSeries& series, std::shared_ptr<const KernelContext> kernel,
                            const SelectOptions& opts) {
  if (opts.p_min < 0 || opts.q_min < 0 || opts.p_max < opts.p_min || opts.q_max < opts.q_min) {
    throw ContractError("select_lags: empty or negative lag grid");
  }
  const bool tuning = !opts.lambda_grid.empty() && opts.split.has_value();
  SelectionResult out;
  out.first_target = static_cast<std::size_t>(std::max(opts.p_max, opts.q_max) + opts.fit.horizon - 1);
  if (out.first_target + 1 >= series.length()) throw InsufficientDataError("select_lags: series too short for the grid");

  double shared_lambda = opts.fit.lambda;
  if (tuning && !opts.tune_each && opts.q_max > 0) {
    shared_lambda = tune_lambda(series, opts.p_max, opts.q_max, kernel, opts.lambda_grid, *opts.split, opts.fit)
                        .best_lambda;
  }

  for (int p = opts.p_min; p <= opts.p_max; ++p) {
    for (int q = opts.q_min; q <= opts.q_max; ++q) {
      SelectionCell cell;
      cell.P = p;
      cell.Q = q;
      out.cells.push_back(cell);
    }
  }
  const std::size_t frames = series.length() - out.first_target;
  parallel_for(out.cells.size(), opts.jobs, [&](std::size_t i) {
    SelectionCell& cell = out.cells[i];
    try {
      FitOptions fo = opts.fit;
      fo.lambda = shared_lambda;
      if (tuning && opts.tune_each && cell.Q > 0) {
        fo.lambda = tune_lambda(series, cell.P, cell.Q, kernel, opts.lambda_grid, *opts.split, opts.fit).best_lambda;
      }
      fo.first_target = out.first_target;
      const FitResult res = fit(series, cell.P, cell.Q, kernel, fo);
      const EffectiveDf df = effective_df(res.model, series, out.first_target);
      cell.lambda = fo.lambda;
      cell.nll = neg_log_likelihood(res.model, series, out.first_target);
      const double ll = -static_cast<double>(frames) * cell.nll;
      cell.df = df.total;
      cell.aic = aic(ll, df.total);
      cell.bic = bic(ll, df.total, frames);
      cell.converged = res.report.converged;
      cell.ok = true;
    } catch (const std::exception& e) {
      cell.ok = false;
      cell.error = e.what();
    }
  });

  if (auto i = argmin_cell(out.cells, &SelectionCell::aic)) out.chosen_aic = {{out.cells[*i].P, out.cells[*i].Q}};
  if (auto i = argmin_cell(out.cells, &SelectionCell::bic)) out.chosen_bic = {{out.cells[*i].P, out.cells[*i].Q}};
  return out;
}

}  // namespace marac
