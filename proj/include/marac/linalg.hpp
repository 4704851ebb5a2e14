#pragma once

// Dense matrix and order-3 tensor primitives shared by the whole library.
//
// Vectorization is column stacking: vec(a)[i + j*M] = a(i, j). With this
// convention vec(A X B^T) = kron(B, A) vec(X), which is how the bilinear
// autoregressive term maps onto its vectorized form.

#include <Eigen/Dense>

#include <cstddef>
#include <span>

namespace marac {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

// M x N x D tensor stored as an (M*N) x D matrix whose column d is the
// vectorized slice d. The storage is therefore the transpose of the
// mode-3 matricization.
class Tensor3 {
 public:
  Tensor3() = default;
  Tensor3(int rows, int cols, int depth);
  // Wraps `slices` (M*N x D, column d = vec(slice d)).
  Tensor3(int rows, int cols, Mat slices);

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  int depth() const { return static_cast<int>(data_.cols()); }

  double operator()(int i, int j, int d) const { return data_(i + j * rows_, d); }
  double& operator()(int i, int j, int d) { return data_(i + j * rows_, d); }

  Mat slice(int d) const;
  void set_slice(int d, const Mat& m);

  // (M*N) x D; column d is vec(slice d).
  const Mat& slices() const { return data_; }

 private:
  int rows_ = 0;
  int cols_ = 0;
  Mat data_;
};

Mat kron(const Mat& a, const Mat& b);

// Tensor-vector product along the last mode: result(i,j) = sum_d g(i,j,d) z(d).
Mat tvp(const Tensor3& g, const Vec& z);

Vec vec(const Mat& a);
Mat unvec(const Vec& v, int rows, int cols);

// D x MN matrix whose row d is vec(slice d)^T.
Mat mode3_mat(const Tensor3& g);

// Solves (a + jitter I) x = b by Cholesky. On factorization failure the
// jitter is raised tenfold, starting from 1e-14 * trace(a)/n when `jitter`
// is zero, up to 1e-6 * trace(a)/n.
Mat spd_solve(const Mat& a, const Mat& b, double jitter = 0.0);

// Lower Cholesky factor of a symmetric positive definite matrix with the
// same jitter escalation as spd_solve.
Mat spd_cholesky(const Mat& a);

// Inverse of a symmetric positive definite matrix (symmetrized).
Mat spd_inverse(const Mat& a);

// log det of a symmetric positive definite matrix.
double spd_logdet(const Mat& a);

// Upper bound on ||kron(b_new, a_new) - kron(b_old, a_old)||_F that avoids
// forming either Kronecker product.
double kron_diff_bound(const Mat& a_new, const Mat& a_old, const Mat& b_new, const Mat& b_old);

double spectral_radius(const Mat& a);

bool all_finite(const Mat& a);

// Symmetric part (a + a^T) / 2.
Mat symmetrize(const Mat& a);

// Frobenius error divided by sqrt(element count).
double rmse(const Mat& estimate, const Mat& truth);

}  // namespace marac
