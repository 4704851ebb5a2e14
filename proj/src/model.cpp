#include "marac/model.hpp"

#include "marac/errors.hpp"

#include <string>

namespace marac {

void MatrixSeries::validate() const {
  if (x.empty()) throw ContractError("MatrixSeries: at least one frame is required");
  if (z.size() != x.size()) throw ShapeError("MatrixSeries: x and z lengths differ");
  if (!timestamps.empty() && timestamps.size() != x.size()) throw ShapeError("MatrixSeries: timestamp count mismatch");
  const auto m = x.front().rows();
  const auto n = x.front().cols();
  const auto d = z.front().size();
  if (m < 1 || n < 1) throw ShapeError("MatrixSeries: frames must be at least 1x1");
  for (std::size_t t = 0; t < x.size(); ++t) {
    if (x[t].rows() != m || x[t].cols() != n) throw ShapeError("MatrixSeries: frame " + std::to_string(t) + " shape differs");
    if (z[t].size() != d) throw ShapeError("MatrixSeries: auxiliary vector " + std::to_string(t) + " length differs");
    if (!x[t].allFinite() || !z[t].allFinite()) throw ContractError("MatrixSeries: non-finite value at frame " + std::to_string(t));
  }
}

MatrixSeries MatrixSeries::slice(std::size_t begin, std::size_t end) const {
  if (begin > end || end > x.size()) throw ContractError("MatrixSeries::slice: bad range");
  MatrixSeries out;
  out.x.assign(x.begin() + static_cast<std::ptrdiff_t>(begin), x.begin() + static_cast<std::ptrdiff_t>(end));
  out.z.assign(z.begin() + static_cast<std::ptrdiff_t>(begin), z.begin() + static_cast<std::ptrdiff_t>(end));
  if (!timestamps.empty()) {
    out.timestamps.assign(timestamps.begin() + static_cast<std::ptrdiff_t>(begin),
                          timestamps.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

void MaracModel::validate() const {
  if (P < 0 || Q < 0) throw ContractError("MaracModel: negative lag count");
  if (horizon < 1) throw ContractError("MaracModel: horizon must be >= 1");
  if (static_cast<int>(A.size()) != P || static_cast<int>(B.size()) != P) throw ShapeError("MaracModel: need P A/B blocks");
  if (static_cast<int>(aux.size()) != Q) throw ShapeError("MaracModel: need Q auxiliary blocks");
  const int m = rows();
  const int n = cols();
  if (m < 1 || n < 1 || sigma_r.cols() != m || sigma_c.cols() != n) throw ShapeError("MaracModel: bad covariance shapes");
  for (int p = 0; p < P; ++p) {
    if (A[p].rows() != m || A[p].cols() != m) throw ShapeError("MaracModel: A block shape");
    if (B[p].rows() != n || B[p].cols() != n) throw ShapeError("MaracModel: B block shape");
  }
  if (Q > 0) {
    if (!kernel) throw ContractError("MaracModel: Q > 0 requires a kernel context");
    if (kernel->size() != m * n) throw ShapeError("MaracModel: kernel grid size differs from M*N");
    const int basis_rows = mode == AuxMode::exact ? m * n : (kernel->truncation ? kernel->truncation->rank() : -1);
    if (basis_rows < 0) throw ContractError("MaracModel: truncated mode without a truncated basis");
    const auto d = aux.front().cols();
    for (const auto& g : aux) {
      if (g.rows() != basis_rows || g.cols() != d || d < 1) throw ShapeError("MaracModel: auxiliary coefficient shape");
    }
  }
}

Mat MaracModel::coeff_matrix(int lag) const {
  if (lag < 1 || lag > Q) throw ContractError("coeff_matrix: lag out of range");
  const Mat& coef = aux[static_cast<std::size_t>(lag - 1)];
  if (mode == AuxMode::exact) return kernel->gram * coef;
  return kernel->truncation->basis * coef;
}

Tensor3 MaracModel::coeff_tensor(int lag) const { return Tensor3(rows(), cols(), coeff_matrix(lag)); }

Mat predict_one(const MaracModel& model, std::span<const Mat> past_x, std::span<const Vec> past_z) {
  if (static_cast<int>(past_x.size()) < model.P) throw ContractError("predict_one: not enough matrix history");
  if (static_cast<int>(past_z.size()) < model.Q) throw ContractError("predict_one: not enough auxiliary history");
  Mat out = Mat::Zero(model.rows(), model.cols());
  for (int p = 1; p <= model.P; ++p) {
    const Mat& xp = past_x[past_x.size() - static_cast<std::size_t>(p)];
    if (xp.rows() != model.rows() || xp.cols() != model.cols()) throw ShapeError("predict_one: frame shape mismatch");
    out.noalias() += model.A[p - 1] * xp * model.B[p - 1].transpose();
  }
  for (int q = 1; q <= model.Q; ++q) {
    const Vec& zq = past_z[past_z.size() - static_cast<std::size_t>(q)];
    if (zq.size() != model.aux_dim()) throw ShapeError("predict_one: auxiliary length mismatch");
    const Vec g = model.coeff_matrix(q) * zq;
    out += unvec(g, model.rows(), model.cols());
  }
  return out;
}

Mat forecast_latency(const MaracModel& model, const MatrixSeries& series, std::size_t t, int h) {
  if (h != model.horizon) throw ContractError("forecast_latency: model was fitted for a different latency");
  if (t > series.length()) throw ContractError("forecast_latency: origin beyond series end");
  return predict_one(model, std::span<const Mat>(series.x.data(), t), std::span<const Vec>(series.z.data(), t));
}

Mat residual(const MaracModel& model, const MatrixSeries& series, std::size_t t) {
  if (t < model.first_target() || t >= series.length()) throw ContractError("residual: frame lacks full history");
  const std::size_t origin = t - static_cast<std::size_t>(model.horizon - 1);
  return series.x[t] - forecast_latency(model, series, origin, model.horizon);
}

double neg_log_likelihood(const MaracModel& model, const MatrixSeries& series, std::optional<std::size_t> first) {
  const std::size_t t0 = first.value_or(model.first_target());
  if (t0 < model.first_target()) throw ContractError("neg_log_likelihood: first frame lacks history");
  if (t0 >= series.length()) throw InsufficientDataError("neg_log_likelihood: no conditioned frames");
  const int m = model.rows();
  const int n = model.cols();
  const double logdet = n * spd_logdet(model.sigma_r) + m * spd_logdet(model.sigma_c);
  const Mat sr_inv = spd_inverse(model.sigma_r);
  const Mat sc_inv = spd_inverse(model.sigma_c);
  double quad = 0.0;
  for (std::size_t t = t0; t < series.length(); ++t) {
    const Mat r = residual(model, series, t);
    quad += (sr_inv * r * sc_inv).cwiseProduct(r).sum();
  }
  const double frames = static_cast<double>(series.length() - t0);
  return 0.5 * logdet + 0.5 * quad / frames;
}

double penalty(const MaracModel& model) {
  double total = 0.0;
  for (const auto& coef : model.aux) {
    if (model.mode == AuxMode::exact) {
      total += (coef.transpose() * model.kernel->gram * coef).trace();
    } else {
      const Vec inv = model.kernel->truncation->eigenvalues.cwiseInverse();
      total += (inv.asDiagonal() * coef).cwiseProduct(coef).sum();
    }
  }
  return 0.5 * model.lambda * total;
}

double penalized_objective(const MaracModel& model, const MatrixSeries& series, std::optional<std::size_t> first) {
  return neg_log_likelihood(model, series, first) + penalty(model);
}

}  // namespace marac
