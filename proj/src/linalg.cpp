#include "marac/linalg.hpp"

#include "marac/errors.hpp"

#include <cmath>
#include <string>

namespace marac {

namespace {

void require_symmetric(const Mat& a, const char* who) {
  if (a.rows() != a.cols()) {
    throw ShapeError(std::string(who) + ": matrix is not square");
  }
  const double scale = std::max(a.cwiseAbs().maxCoeff(), 1e-300);
  if ((a - a.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale) {
    throw ContractError(std::string(who) + ": matrix is not symmetric");
  }
}

// Cholesky with escalating diagonal jitter.
Eigen::LLT<Mat> jittered_llt(const Mat& a, double jitter, const char* who) {
  const auto n = a.rows();
  const double mean_diag = a.trace() / static_cast<double>(n);
  const double max_jitter = 1e-6 * std::max(mean_diag, 0.0);
  Mat work = a;
  double j = jitter;
  for (;;) {
    if (j > 0.0) {
      work = a;
      work.diagonal().array() += j;
    }
    Eigen::LLT<Mat> llt(work);
    if (llt.info() == Eigen::Success) return llt;
    if (max_jitter <= 0.0 || !std::isfinite(max_jitter)) break;
    j = (j > 0.0) ? j * 10.0 : 1e-14 * mean_diag;
    if (j > max_jitter * (1.0 + 1e-12)) break;
  }
  throw SingularityError(std::string(who) + ": factorization failed at maximum jitter");
}

}  // namespace

Tensor3::Tensor3(int rows, int cols, int depth)
    : rows_(rows), cols_(cols), data_(Mat::Zero(static_cast<Eigen::Index>(rows) * cols, depth)) {
  if (rows < 1 || cols < 1 || depth < 1) throw ShapeError("Tensor3: all dimensions must be >= 1");
}

Tensor3::Tensor3(int rows, int cols, Mat slices) : rows_(rows), cols_(cols), data_(std::move(slices)) {
  if (rows < 1 || cols < 1 || data_.cols() < 1) throw ShapeError("Tensor3: all dimensions must be >= 1");
  if (data_.rows() != static_cast<Eigen::Index>(rows) * cols) {
    throw ShapeError("Tensor3: slice matrix must have rows*cols rows");
  }
}

Mat Tensor3::slice(int d) const { return unvec(data_.col(d), rows_, cols_); }

void Tensor3::set_slice(int d, const Mat& m) {
  if (m.rows() != rows_ || m.cols() != cols_) throw ShapeError("Tensor3::set_slice: shape mismatch");
  data_.col(d) = vec(m);
}

Mat kron(const Mat& a, const Mat& b) {
  Mat out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
    }
  }
  return out;
}

Mat tvp(const Tensor3& g, const Vec& z) {
  if (z.size() != g.depth()) throw ShapeError("tvp: vector length does not match tensor depth");
  return unvec(g.slices() * z, g.rows(), g.cols());
}

Vec vec(const Mat& a) { return Eigen::Map<const Vec>(a.data(), a.size()); }

Mat unvec(const Vec& v, int rows, int cols) {
  if (v.size() != static_cast<Eigen::Index>(rows) * cols) throw ShapeError("unvec: length mismatch");
  return Eigen::Map<const Mat>(v.data(), rows, cols);
}

Mat mode3_mat(const Tensor3& g) { return g.slices().transpose(); }

Mat spd_solve(const Mat& a, const Mat& b, double jitter) {
  require_symmetric(a, "spd_solve");
  if (b.rows() != a.rows()) throw ShapeError("spd_solve: right-hand side row count mismatch");
  if (jitter < 0.0) throw ContractError("spd_solve: negative jitter");
  return jittered_llt(a, jitter, "spd_solve").solve(b);
}

Mat spd_cholesky(const Mat& a) {
  require_symmetric(a, "spd_cholesky");
  return jittered_llt(a, 0.0, "spd_cholesky").matrixL();
}

Mat spd_inverse(const Mat& a) {
  return symmetrize(spd_solve(a, Mat::Identity(a.rows(), a.cols())));
}

double spd_logdet(const Mat& a) {
  require_symmetric(a, "spd_logdet");
  Eigen::LLT<Mat> llt(a);
  if (llt.info() != Eigen::Success) throw SingularityError("spd_logdet: matrix is not positive definite");
  const Mat l = llt.matrixL();
  double out = 0.0;
  for (Eigen::Index i = 0; i < l.rows(); ++i) {
    if (!(l(i, i) > 0.0)) throw SingularityError("spd_logdet: matrix is not positive definite");
    out += 2.0 * std::log(l(i, i));
  }
  return out;
}

double kron_diff_bound(const Mat& a_new, const Mat& a_old, const Mat& b_new, const Mat& b_old) {
  if (a_new.rows() != a_old.rows() || a_new.cols() != a_old.cols() || b_new.rows() != b_old.rows() ||
      b_new.cols() != b_old.cols()) {
    throw ShapeError("kron_diff_bound: pair shapes differ");
  }
  return (b_new - b_old).norm() * a_new.norm() + b_old.norm() * (a_new - a_old).norm();
}

double spectral_radius(const Mat& a) {
  if (a.rows() != a.cols()) throw ShapeError("spectral_radius: matrix is not square");
  if (a.size() == 0) return 0.0;
  Eigen::EigenSolver<Mat> es(a, false);
  if (es.info() != Eigen::Success) throw SingularityError("spectral_radius: eigensolver did not converge");
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

bool all_finite(const Mat& a) { return a.allFinite(); }

Mat symmetrize(const Mat& a) { return 0.5 * (a + a.transpose()); }

double rmse(const Mat& estimate, const Mat& truth) {
  if (estimate.rows() != truth.rows() || estimate.cols() != truth.cols()) throw ShapeError("rmse: shape mismatch");
  if (truth.size() == 0) return 0.0;
  return (estimate - truth).norm() / std::sqrt(static_cast<double>(truth.size()));
}

}  // namespace marac
