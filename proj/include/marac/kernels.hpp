#pragma once

// Spatial grids, kernels on them, Gram matrices and truncated Mercer bases.

#include "marac/linalg.hpp"

#include <json.hpp>

#include <optional>
#include <variant>
#include <vector>

namespace marac {

enum class GridKind { planar_unit_square, sphere_latlon };

// Location of matrix entry (i, j) is stored at index u = i + j*M.
// Planar points are (x, y) in [0,1]^2 with x following the row index.
// Sphere points are (theta, phi) in degrees: polar angle in (0, 180),
// azimuth in [0, 360).
struct GridPoint {
  double a = 0.0;
  double b = 0.0;
};

struct GridSpec {
  GridKind kind = GridKind::planar_unit_square;
  int rows = 0;
  int cols = 0;
  std::vector<GridPoint> locations;

  int size() const { return rows * cols; }
  const GridPoint& at(int i, int j) const { return locations[static_cast<std::size_t>(i + j * rows)]; }

  // Evenly spaced x_i = i/(M-1) (0.5 when M = 1), likewise for columns.
  static GridSpec planar(int rows, int cols);
  // theta_i = (i + 1/2) * 180/M, phi_j = j * 360/N. Poles are excluded so
  // no two locations coincide.
  static GridSpec sphere(int rows, int cols);
};

// Matern kernel on [0,1] with smoothness nu in {0.5, 1.5, 2.5}. nu = 0.5 is
// the exponential kernel exp(-|u-s|/l). An infinite lengthscale yields the
// constant kernel 1.
struct Matern1D {
  double lengthscale = 0.3;
  double nu = 0.5;

  double operator()(double u, double s) const;
};

struct LebedevKernel {
  double eta = 3.0;
};

// k((u,v),(s,t)) = row(u,s) * col(v,t).
struct PlanarProductKernel {
  Matern1D row;
  Matern1D col;
};

using Kernel = std::variant<LebedevKernel, PlanarProductKernel>;

PlanarProductKernel planar_product_kernel(Matern1D row, Matern1D col);

// Lebedev kernel on the unit sphere, points given as (theta, phi) in radians.
// The inner product is the cosine of the central angle.
double lebedev_eval(double theta1, double phi1, double theta2, double phi2, double eta);

// Orthonormal real spherical harmonic Y_l^m(theta, phi), angles in radians,
// associated Legendre functions without the Condon-Shortley phase.
double spherical_harmonic(int l, int m, double theta, double phi);

// Associated Legendre P_l^m(x), m >= 0, without the Condon-Shortley phase.
double assoc_legendre(int l, int m, double x);

double kernel_eval(const Kernel& kernel, GridKind kind, const GridPoint& p1, const GridPoint& p2);

// Pairwise kernel evaluations, no jitter.
Mat raw_gram(const GridSpec& grid, const Kernel& kernel);

struct GramResult {
  Mat gram;
  double jitter = 0.0;
};

// Pairwise kernel evaluations; adds a multiple of I when the smallest
// eigenvalue is at or below 1e-10 times the largest.
GramResult gram_matrix(const GridSpec& grid, const Kernel& kernel);

// Leading R eigenfunctions evaluated on the grid (columns of `basis`) and
// their eigenvalues in non-increasing order.
struct Truncation {
  Mat basis;
  Vec eigenvalues;

  int rank() const { return static_cast<int>(eigenvalues.size()); }
};

// Lebedev: spherical harmonics up to degree L with R = (L+1)^2, constant
// function first. Planar: eigenvectors of the (jittered) Gram matrix with
// R <= S.
Truncation truncated_basis(const GridSpec& grid, const Kernel& kernel, int rank);

// Immutable kernel state shared by fitted models.
struct KernelContext {
  GridSpec grid;
  Kernel kernel;
  Mat gram;
  double jitter = 0.0;
  // Power-law decay rate of the Gram eigenvalues, see gram_decay_exponent.
  double decay_exponent = 0.0;
  std::optional<Truncation> truncation;

  int size() const { return grid.size(); }
  KernelContext with_truncation(int rank) const;
};

KernelContext make_kernel_context(GridSpec grid, Kernel kernel, std::optional<int> rank = std::nullopt);

// Least-squares slope r of log eig_i ~ -r log i over the leading eigenvalues
// of a Gram matrix.
double gram_decay_exponent(const Mat& gram, int leading = 0);

// grid.json: {kind, M, N, kernel: {family, eta | lengthscales, nu}}
nlohmann::json grid_to_json(const GridSpec& grid, const Kernel& kernel);
std::pair<GridSpec, Kernel> grid_from_json(const nlohmann::json& j);

}  // namespace marac
