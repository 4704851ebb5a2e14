#include "marac/estimator.hpp"

#include "marac/errors.hpp"
#include "marac/selection.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <string>

namespace marac {

namespace {

// Direct S*D solve up to this size, per-covariate block sweep beyond it.
constexpr Eigen::Index kDenseAuxLimit = 4000;

// Clamp eigenvalues of a symmetric matrix at 1e-10 times its mean diagonal.
Mat floor_spd(const Mat& s, bool diagonal) {
  const double mean_diag = s.trace() / static_cast<double>(s.rows());
  const double floor = mean_diag > 0.0 ? 1e-10 * mean_diag : 1e-10;
  if (diagonal) {
    Mat out = Mat::Zero(s.rows(), s.cols());
    for (Eigen::Index i = 0; i < s.rows(); ++i) out(i, i) = std::max(s(i, i), floor);
    return out;
  }
  Eigen::SelfAdjointEigenSolver<Mat> es(symmetrize(s));
  if (es.eigenvalues().minCoeff() >= floor) return symmetrize(s);
  const Vec clamped = es.eigenvalues().cwiseMax(floor);
  return symmetrize(es.eigenvectors() * clamped.asDiagonal() * es.eigenvectors().transpose());
}

Mat diagonal_part(const Mat& s) {
  Mat out = Mat::Zero(s.rows(), s.cols());
  out.diagonal() = s.diagonal();
  return out;
}

}  // namespace

BlockState::BlockState(const MatrixSeries& series, MaracModel model, std::optional<std::size_t> first_target)
    : series_(series), model_(std::move(model)) {
  model_.validate();
  series_.validate();
  if (series_.rows() != model_.rows() || series_.cols() != model_.cols()) {
    throw ShapeError("BlockState: series and model shapes differ");
  }
  if (model_.Q > 0 && series_.aux_dim() != model_.aux_dim()) {
    throw ShapeError("BlockState: auxiliary dimension differs from model");
  }
  first_ = first_target.value_or(model_.first_target());
  if (first_ < model_.first_target()) throw ContractError("BlockState: first target lacks history");
  if (first_ >= series_.length()) throw InsufficientDataError("BlockState: no target frames");
  shift_ = static_cast<std::size_t>(model_.horizon - 1);
  resid_.resize(series_.length() - first_);
  aux_cache_.resize(static_cast<std::size_t>(model_.Q));
  for (int q = 1; q <= model_.Q; ++q) refresh_aux_cache(q);
  refresh_inverses();
  recompute_residuals();
}

const Mat& BlockState::lagged_x(std::size_t k, int lag) const {
  return series_.x[first_ + k - shift_ - static_cast<std::size_t>(lag)];
}

const Vec& BlockState::lagged_z(std::size_t k, int lag) const {
  return series_.z[first_ + k - shift_ - static_cast<std::size_t>(lag)];
}

Mat BlockState::lagged_z_matrix(int lag) const {
  const auto d = series_.aux_dim();
  Mat zq(static_cast<Eigen::Index>(frames()), d);
  for (std::size_t k = 0; k < frames(); ++k) zq.row(static_cast<Eigen::Index>(k)) = lagged_z(k, lag).transpose();
  return zq;
}

Mat BlockState::residual_matrix() const {
  const int s = model_.rows() * model_.cols();
  Mat r(s, static_cast<Eigen::Index>(frames()));
  for (std::size_t k = 0; k < frames(); ++k) r.col(static_cast<Eigen::Index>(k)) = vec(resid_[k]);
  return r;
}

void BlockState::store_residual_matrix(const Mat& rmat) {
  for (std::size_t k = 0; k < frames(); ++k) {
    resid_[k] = unvec(rmat.col(static_cast<Eigen::Index>(k)), model_.rows(), model_.cols());
  }
}

void BlockState::recompute_residuals() {
  for (std::size_t k = 0; k < frames(); ++k) {
    Mat r = series_.x[first_ + k];
    for (int p = 1; p <= model_.P; ++p) r.noalias() -= model_.A[p - 1] * lagged_x(k, p) * model_.B[p - 1].transpose();
    for (int q = 1; q <= model_.Q; ++q) {
      const Vec g = aux_cache_[q - 1] * lagged_z(k, q);
      r -= unvec(g, model_.rows(), model_.cols());
    }
    resid_[k] = std::move(r);
  }
}

void BlockState::refresh_inverses() {
  sr_inv_ = spd_inverse(model_.sigma_r);
  sc_inv_ = spd_inverse(model_.sigma_c);
}

void BlockState::refresh_aux_cache(int q) { aux_cache_[q - 1] = model_.coeff_matrix(q); }

Mat BlockState::update_A(int p) {
  if (p < 1 || p > model_.P) throw ContractError("update_A: lag out of range");
  const int m = model_.rows();
  Mat& a = model_.A[p - 1];
  const Mat& b = model_.B[p - 1];
  Mat num = Mat::Zero(m, m);
  Mat den = Mat::Zero(m, m);
  std::vector<Mat> w(frames());
  for (std::size_t k = 0; k < frames(); ++k) {
    w[k].noalias() = lagged_x(k, p) * b.transpose();
    const Mat wsc = w[k] * sc_inv_;
    den.noalias() += wsc * w[k].transpose();
    num.noalias() += resid_[k] * wsc.transpose();
  }
  den = symmetrize(den);
  // Partial residual X_t,-p = R_t + A W_t, so the normal equations read
  // (sum R Sc^-1 W^T + A den) = A_new den.
  num.noalias() += a * den;
  const Mat a_new = spd_solve(den, num.transpose()).transpose();
  const Mat delta = a_new - a;
  for (std::size_t k = 0; k < frames(); ++k) resid_[k].noalias() -= delta * w[k];
  a = a_new;
  return a;
}

Mat BlockState::update_B(int p) {
  if (p < 1 || p > model_.P) throw ContractError("update_B: lag out of range");
  const int n = model_.cols();
  const Mat& a = model_.A[p - 1];
  Mat& b = model_.B[p - 1];
  Mat num = Mat::Zero(n, n);
  Mat den = Mat::Zero(n, n);
  std::vector<Mat> v(frames());
  for (std::size_t k = 0; k < frames(); ++k) {
    v[k].noalias() = a * lagged_x(k, p);  // M x N, term is v B^T
    const Mat srv = sr_inv_ * v[k];
    den.noalias() += v[k].transpose() * srv;
    num.noalias() += resid_[k].transpose() * srv;
  }
  den = symmetrize(den);
  num.noalias() += b * den;
  const Mat b_new = spd_solve(den, num.transpose()).transpose();
  const Mat delta = b_new - b;
  for (std::size_t k = 0; k < frames(); ++k) resid_[k].noalias() -= v[k] * delta.transpose();
  b = b_new;
  return b;
}

Vec BlockState::update_gamma(int q) {
  if (model_.mode != AuxMode::exact) throw ContractError("update_gamma: model is in truncated mode");
  if (q < 1 || q > model_.Q) throw ContractError("update_gamma: lag out of range");
  if (!(model_.lambda > 0.0)) throw ContractError("update_gamma: lambda must be positive in exact mode");
  const Mat& k = model_.kernel->gram;
  const Eigen::Index s = k.rows();
  const Mat zq = lagged_z_matrix(q);
  const Eigen::Index d = zq.cols();
  const Mat c = zq.transpose() * zq;
  const double scale = model_.lambda * static_cast<double>(frames());
  // Partial residuals leave out the lag-q auxiliary term.
  Mat xt = residual_matrix();
  xt.noalias() += aux_cache_[q - 1] * zq.transpose();
  const Mat cross = xt * zq;  // S x D, column d = sum_t z_{t,d} x~_t
  const Mat sigma = kron(model_.sigma_c, model_.sigma_r);
  Mat gamma = model_.aux[q - 1];
  if (s * d <= kDenseAuxLimit) {
    Mat h = kron(c, k);
    for (Eigen::Index i = 0; i < d; ++i) h.block(i * s, i * s, s, s) += scale * sigma;
    const Vec rhs = vec(cross);
    gamma = unvec(spd_solve(symmetrize(h), rhs), static_cast<int>(s), static_cast<int>(d));
  } else {
    for (Eigen::Index i = 0; i < d; ++i) {
      Vec rhs = cross.col(i);
      for (Eigen::Index j = 0; j < d; ++j) {
        if (j != i) rhs.noalias() -= c(i, j) * (k * gamma.col(j));
      }
      const Mat h = c(i, i) * k + scale * sigma;
      gamma.col(i) = spd_solve(symmetrize(h), rhs);
    }
  }
  model_.aux[q - 1] = gamma;
  refresh_aux_cache(q);
  xt.noalias() -= aux_cache_[q - 1] * zq.transpose();
  store_residual_matrix(xt);
  return vec(gamma);
}

Vec BlockState::update_theta(int q) {
  if (model_.mode != AuxMode::truncated) throw ContractError("update_theta: model is in exact mode");
  if (q < 1 || q > model_.Q) throw ContractError("update_theta: lag out of range");
  if (model_.lambda < 0.0) throw ContractError("update_theta: negative lambda");
  const Truncation& tr = *model_.kernel->truncation;
  const Mat zq = lagged_z_matrix(q);
  const Mat c = zq.transpose() * zq;
  const Eigen::Index r = tr.basis.cols();
  const Eigen::Index d = zq.cols();
  const double scale = model_.lambda * static_cast<double>(frames());
  Mat xt = residual_matrix();
  xt.noalias() += aux_cache_[q - 1] * zq.transpose();
  Mat theta;
  if (scale > 0.0) {
    // With Sigma = G G^T and F = G^-1 K_R Lambda^1/2 (S x R), Theta = Lambda^1/2 Phi
    // solves F^T F Phi C + s Phi = F^T H, H = G^-1 X z. Diagonalizing C and F F^T
    // (S x S) gives each column in closed form without an (R D)^2 system.
    const Mat lr = spd_cholesky(model_.sigma_r);
    const Mat lc = spd_cholesky(model_.sigma_c);
    const int m = model_.rows();
    const int n = model_.cols();
    auto whiten = [&](const Mat& cols) {
      Mat out(cols.rows(), cols.cols());
      for (Eigen::Index k = 0; k < cols.cols(); ++k) {
        Mat f = lr.triangularView<Eigen::Lower>().solve(unvec(cols.col(k), m, n));
        f = lc.triangularView<Eigen::Lower>().solve(f.transpose()).transpose();
        out.col(k) = vec(f);
      }
      return out;
    };
    const Vec sqrt_eig = tr.eigenvalues.cwiseSqrt();
    const Mat f = whiten(tr.basis * sqrt_eig.asDiagonal());  // S x R
    const Mat hm = whiten(xt * zq);                          // S x D
    const Eigen::SelfAdjointEigenSolver<Mat> ef(symmetrize(f * f.transpose()));
    const Eigen::SelfAdjointEigenSolver<Mat> ec(symmetrize(c));
    const Vec e = ef.eigenvalues().cwiseMax(0.0);
    const Mat h_rot = ef.eigenvectors().transpose() * hm * ec.eigenvectors();  // S x D
    Mat w(h_rot.rows(), d);
    for (Eigen::Index i = 0; i < d; ++i) {
      const double ci = std::max(ec.eigenvalues()(i), 0.0);
      w.col(i) = h_rot.col(i).array() / (ci * e.array() + scale);
    }
    const Mat phi = f.transpose() * (ef.eigenvectors() * w) * ec.eigenvectors().transpose();
    theta = sqrt_eig.asDiagonal() * phi;
  } else {
    const Mat sigma_inv = kron(sc_inv_, sr_inv_);
    const Mat sib = sigma_inv * tr.basis;                       // S x R
    const Mat gram_r = symmetrize(tr.basis.transpose() * sib);  // K_R^T Sigma^-1 K_R
    const Mat h = kron(c, gram_r);
    const Vec rhs = vec(sib.transpose() * (xt * zq));
    theta = unvec(spd_solve(symmetrize(h), rhs), static_cast<int>(r), static_cast<int>(d));
  }
  model_.aux[q - 1] = theta;
  refresh_aux_cache(q);
  xt.noalias() -= aux_cache_[q - 1] * zq.transpose();
  store_residual_matrix(xt);
  return vec(theta);
}

Vec BlockState::update_aux(int q) {
  return model_.mode == AuxMode::exact ? update_gamma(q) : update_theta(q);
}

std::pair<Mat, Mat> BlockState::update_sigma() {
  const int m = model_.rows();
  const int n = model_.cols();
  const double tp = static_cast<double>(frames());
  Mat sr = Mat::Zero(m, m);
  for (const auto& r : resid_) sr.noalias() += r * sc_inv_ * r.transpose();
  sr /= n * tp;
  if (model_.diag_sigma) sr = diagonal_part(sr);
  sr = floor_spd(sr, model_.diag_sigma);
  const Mat sr_inv = spd_inverse(sr);
  Mat sc = Mat::Zero(n, n);
  for (const auto& r : resid_) sc.noalias() += r.transpose() * sr_inv * r;
  sc /= m * tp;
  if (model_.diag_sigma) sc = diagonal_part(sc);
  sc = floor_spd(sc, model_.diag_sigma);
  // Sigma_c (x) Sigma_r is invariant to (c Sigma_r, Sigma_c / c); pin trace(Sigma_r) = M.
  const double c = sr.trace() / m;
  model_.sigma_r = sr / c;
  model_.sigma_c = sc * c;
  refresh_inverses();
  return {model_.sigma_r, model_.sigma_c};
}

void BlockState::set_A(int p, Mat a) {
  model_.A.at(static_cast<std::size_t>(p - 1)) = std::move(a);
  recompute_residuals();
}

void BlockState::set_B(int p, Mat b) {
  model_.B.at(static_cast<std::size_t>(p - 1)) = std::move(b);
  recompute_residuals();
}

void BlockState::set_aux(int q, Mat coef) {
  model_.aux.at(static_cast<std::size_t>(q - 1)) = std::move(coef);
  refresh_aux_cache(q);
  recompute_residuals();
}

void BlockState::set_sigma(Mat sigma_r, Mat sigma_c) {
  model_.sigma_r = std::move(sigma_r);
  model_.sigma_c = std::move(sigma_c);
  refresh_inverses();
}

void BlockState::set_lambda(double lambda) { model_.lambda = lambda; }

double BlockState::neg_log_likelihood() const {
  const int m = model_.rows();
  const int n = model_.cols();
  double quad = 0.0;
  for (const auto& r : resid_) quad += (sr_inv_ * r * sc_inv_).cwiseProduct(r).sum();
  const double logdet = n * spd_logdet(model_.sigma_r) + m * spd_logdet(model_.sigma_c);
  return 0.5 * logdet + 0.5 * quad / static_cast<double>(frames());
}

double BlockState::objective() const { return neg_log_likelihood() + penalty(model_); }

Mat BlockState::gradient_A(int p) const {
  const int m = model_.rows();
  Mat g = Mat::Zero(m, m);
  for (std::size_t k = 0; k < frames(); ++k) {
    const Mat w = lagged_x(k, p) * model_.B[p - 1].transpose();
    g.noalias() -= sr_inv_ * resid_[k] * sc_inv_ * w.transpose();
  }
  return g / static_cast<double>(frames());
}

Mat BlockState::gradient_B(int p) const {
  const int n = model_.cols();
  Mat g = Mat::Zero(n, n);
  for (std::size_t k = 0; k < frames(); ++k) {
    const Mat v = model_.A[p - 1] * lagged_x(k, p);
    g.noalias() -= sc_inv_ * resid_[k].transpose() * sr_inv_ * v;
  }
  return g / static_cast<double>(frames());
}

Mat BlockState::gradient_aux(int q) const {
  const Mat zq = lagged_z_matrix(q);
  const Mat rmat = residual_matrix();
  const Mat sigma_inv = kron(sc_inv_, sr_inv_);
  const Mat weighted = sigma_inv * (rmat * zq) / static_cast<double>(frames());  // S x D
  const Mat& coef = model_.aux[q - 1];
  if (model_.mode == AuxMode::exact) {
    const Mat& k = model_.kernel->gram;
    return -k * weighted + model_.lambda * (k * coef);
  }
  const Truncation& tr = *model_.kernel->truncation;
  return -tr.basis.transpose() * weighted + model_.lambda * (tr.eigenvalues.cwiseInverse().asDiagonal() * coef);
}

MaracModel initial_model(int rows, int cols, int aux_dim, int P, int Q, std::shared_ptr<const KernelContext> kernel,
                         const FitOptions& opts) {
  MaracModel model;
  model.P = P;
  model.Q = Q;
  model.lambda = opts.lambda;
  model.diag_sigma = opts.diag_sigma;
  model.horizon = opts.horizon;
  model.kernel = std::move(kernel);
  model.mode = opts.truncation_rank ? AuxMode::truncated : AuxMode::exact;
  for (int p = 0; p < P; ++p) {
    model.A.push_back(Mat::Identity(rows, rows) / std::sqrt(static_cast<double>(rows)));
    model.B.push_back(Mat::Identity(cols, cols) * (0.5 / P));
  }
  const int basis_rows = opts.truncation_rank ? *opts.truncation_rank : rows * cols;
  for (int q = 0; q < Q; ++q) model.aux.push_back(Mat::Zero(basis_rows, aux_dim));
  model.sigma_r = Mat::Identity(rows, rows);
  model.sigma_c = Mat::Identity(cols, cols);
  return model;
}

MaracModel enforce_identifiability(MaracModel model) {
  for (int p = 0; p < model.P; ++p) {
    const double norm = model.A[p].norm();
    if (!(norm > 0.0)) throw ContractError("enforce_identifiability: A block is zero");
    const double c = model.A[p].trace() < 0.0 ? -norm : norm;
    model.A[p] /= c;
    model.B[p] *= c;
  }
  return model;
}

FitResult fit(const MatrixSeries& series, int P, int Q, std::shared_ptr<const KernelContext> kernel,
              const FitOptions& opts) {
  const auto started = std::chrono::steady_clock::now();
  series.validate();
  if (P < 0 || Q < 0) throw ContractError("fit: negative lag count");
  if (opts.horizon < 1) throw ContractError("fit: horizon must be >= 1");
  if (!(opts.rel_tol > 0.0)) throw ContractError("fit: rel_tol must be positive");
  if (opts.max_iters < 1) throw ContractError("fit: max_iters must be >= 1");
  const std::size_t need = static_cast<std::size_t>(std::max(P, Q) + opts.horizon - 1 + 2);
  if (series.length() < need) {
    throw InsufficientDataError("fit: need at least " + std::to_string(need) + " frames, got " +
                                std::to_string(series.length()));
  }
  if (Q > 0) {
    if (series.aux_dim() < 1) throw ContractError("fit: Q > 0 requires auxiliary covariates");
    if (!kernel) throw ContractError("fit: Q > 0 requires a kernel context");
    if (!opts.truncation_rank && !(opts.lambda > 0.0)) {
      throw ContractError("fit: exact mode requires lambda > 0 when Q > 0");
    }
    if (opts.lambda < 0.0) throw ContractError("fit: lambda must be non-negative");
    if (opts.truncation_rank &&
        (!kernel->truncation || kernel->truncation->rank() != *opts.truncation_rank)) {
      kernel = std::make_shared<const KernelContext>(kernel->with_truncation(*opts.truncation_rank));
    }
  }

  MaracModel start;
  if (opts.warm_start) {
    start = *opts.warm_start;
    if (start.P != P || start.Q != Q) throw ContractError("fit: warm start has different lags");
    if ((start.mode == AuxMode::truncated) != opts.truncation_rank.has_value()) {
      throw ContractError("fit: warm start uses a different auxiliary mode");
    }
    start.lambda = opts.lambda;
    start.diag_sigma = opts.diag_sigma;
    start.horizon = opts.horizon;
    if (Q > 0) start.kernel = kernel;
  } else {
    start = initial_model(series.rows(), series.cols(), series.aux_dim(), P, Q, kernel, opts);
  }

  BlockState state(series, std::move(start), opts.first_target);
  FitReport report;
  report.objective_trace.push_back(state.objective());
  int rises = 0;
  for (int iter = 1; iter <= opts.max_iters; ++iter) {
    const MaracModel old = state.model();
    for (int p = 1; p <= P; ++p) {
      state.update_A(p);
      state.update_B(p);
    }
    for (int q = 1; q <= Q; ++q) state.update_aux(q);
    state.update_sigma();

    const double f = state.objective();
    const double prev = report.objective_trace.back();
    report.objective_trace.push_back(f);
    report.iters_run = iter;
    rises = (f > prev + 1e-6 * (1.0 + std::abs(prev))) ? rises + 1 : 0;
    if (rises >= 2) {
      throw InternalError("fit: penalized objective increased on two consecutive sweeps (" + std::to_string(prev) +
                          " -> " + std::to_string(f) + ")");
    }

    const MaracModel& cur = state.model();
    bool small = true;
    double worst = 0.0;
    auto check = [&](double change, double norm) {
      const double rel = change / (1.0 + norm);
      worst = std::max(worst, rel);
      if (rel >= opts.rel_tol) small = false;
    };
    for (int p = 0; p < P; ++p) {
      check(kron_diff_bound(cur.A[p], old.A[p], cur.B[p], old.B[p]), cur.A[p].norm() * cur.B[p].norm());
    }
    for (int q = 1; q <= Q; ++q) {
      const Mat g_new = cur.coeff_matrix(q);
      check((g_new - old.coeff_matrix(q)).norm(), g_new.norm());
    }
    check(kron_diff_bound(cur.sigma_r, old.sigma_r, cur.sigma_c, old.sigma_c),
          cur.sigma_r.norm() * cur.sigma_c.norm());
    report.max_block_change.push_back(worst);
    if (small) {
      report.converged = true;
      break;
    }
  }

  for (int p = 1; p <= P; ++p) {
    report.gradient_norms.a.push_back(state.gradient_A(p).norm());
    report.gradient_norms.b.push_back(state.gradient_B(p).norm());
  }
  for (int q = 1; q <= Q; ++q) report.gradient_norms.aux.push_back(state.gradient_aux(q).norm());

  FitResult out{enforce_identifiability(state.model()), std::move(report)};
  const auto df = effective_df(out.model, series, state.first_target());
  out.report.df_total = df.total;
  out.report.df_per_lag = df.per_lag;
  if (Q > 0) out.report.gram_decay_exponent = out.model.kernel->decay_exponent;
  out.report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return out;
}

double prediction_rmse(const MaracModel& model, const MatrixSeries& series, std::size_t begin, std::size_t end) {
  if (begin >= end || end > series.length()) throw ContractError("prediction_rmse: empty or invalid window");
  if (begin < model.first_target()) throw ContractError("prediction_rmse: window starts before full history");
  double sse = 0.0;
  for (std::size_t t = begin; t < end; ++t) sse += residual(model, series, t).squaredNorm();
  const double count = static_cast<double>(end - begin) * model.rows() * model.cols();
  return std::sqrt(sse / count);
}

LambdaSearch tune_lambda(const MatrixSeries& series, int P, int Q, std::shared_ptr<const KernelContext> kernel,
                         const std::vector<double>& lambda_grid, const Split& split, FitOptions opts) {
  if (lambda_grid.empty()) throw ContractError("tune_lambda: empty lambda grid");
  if (split.train_end == 0 || split.val_end <= split.train_end || split.val_end > series.length()) {
    throw ContractError("tune_lambda: empty validation window");
  }
  const MatrixSeries train = series.slice(0, split.train_end);
  LambdaSearch out;
  std::optional<MaracModel> previous = opts.warm_start;
  double best = std::numeric_limits<double>::infinity();
  for (const double lambda : lambda_grid) {
    opts.lambda = lambda;
    opts.warm_start = previous;
    FitResult res = fit(train, P, Q, kernel, opts);
    const double score = prediction_rmse(res.model, series, split.train_end, split.val_end);
    out.lambdas.push_back(lambda);
    out.validation_rmse.push_back(score);
    out.converged.push_back(res.report.converged);
    const bool better = score < best || (score == best && lambda > out.best_lambda);
    if (better) {
      best = score;
      out.best_lambda = lambda;
      out.best_model = res.model;
    }
    previous = std::move(res.model);
  }
  return out;
}

}  // namespace marac
