#include "marac/kernels.hpp"

#include "marac/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

namespace marac {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kDeg = kPi / 180.0;

struct Xyz {
  double x, y, z;
};

Xyz to_unit(double theta, double phi) {
  return {std::sin(theta) * std::cos(phi), std::sin(theta) * std::sin(phi), std::cos(theta)};
}

// sqrt((2l+1)/(4 pi) * (l-m)!/(l+m)!)
double harmonic_norm(int l, int m) {
  double ratio = 1.0;
  for (int k = l - m + 1; k <= l + m; ++k) ratio /= static_cast<double>(k);
  return std::sqrt((2.0 * l + 1.0) / (4.0 * kPi) * ratio);
}

double lebedev_eigenvalue(int l, double eta) {
  if (l == 0) return 1.0;
  return eta / ((4.0 * l * l - 1.0) * (2.0 * l + 3.0));
}

}  // namespace

GridSpec GridSpec::planar(int rows, int cols) {
  if (rows < 1 || cols < 1) throw ContractError("GridSpec::planar: dimensions must be >= 1");
  GridSpec g;
  g.kind = GridKind::planar_unit_square;
  g.rows = rows;
  g.cols = cols;
  g.locations.resize(static_cast<std::size_t>(rows) * cols);
  auto coord = [](int k, int n) { return n == 1 ? 0.5 : static_cast<double>(k) / (n - 1); };
  for (int j = 0; j < cols; ++j) {
    for (int i = 0; i < rows; ++i) g.locations[static_cast<std::size_t>(i + j * rows)] = {coord(i, rows), coord(j, cols)};
  }
  return g;
}

GridSpec GridSpec::sphere(int rows, int cols) {
  if (rows < 1 || cols < 1) throw ContractError("GridSpec::sphere: dimensions must be >= 1");
  GridSpec g;
  g.kind = GridKind::sphere_latlon;
  g.rows = rows;
  g.cols = cols;
  g.locations.resize(static_cast<std::size_t>(rows) * cols);
  for (int j = 0; j < cols; ++j) {
    for (int i = 0; i < rows; ++i) {
      g.locations[static_cast<std::size_t>(i + j * rows)] = {(i + 0.5) * 180.0 / rows, j * 360.0 / cols};
    }
  }
  return g;
}

double Matern1D::operator()(double u, double s) const {
  if (std::isinf(lengthscale)) return 1.0;
  const double d = std::abs(u - s) / lengthscale;
  if (nu == 0.5) return std::exp(-d);
  if (nu == 1.5) {
    const double a = std::sqrt(3.0) * d;
    return (1.0 + a) * std::exp(-a);
  }
  if (nu == 2.5) {
    const double a = std::sqrt(5.0) * d;
    return (1.0 + a + a * a / 3.0) * std::exp(-a);
  }
  throw ContractError("Matern1D: nu must be 0.5, 1.5 or 2.5");
}

PlanarProductKernel planar_product_kernel(Matern1D row, Matern1D col) {
  if (!(row.lengthscale > 0.0) || !(col.lengthscale > 0.0)) {
    throw ContractError("planar_product_kernel: lengthscales must be positive");
  }
  return PlanarProductKernel{row, col};
}

double lebedev_eval(double theta1, double phi1, double theta2, double phi2, double eta) {
  const Xyz a = to_unit(theta1, phi1);
  const Xyz b = to_unit(theta2, phi2);
  const double c = std::clamp(a.x * b.x + a.y * b.y + a.z * b.z, -1.0, 1.0);
  return (1.0 / (4.0 * kPi) + eta / (12.0 * kPi)) - eta / (8.0 * kPi) * std::sqrt((1.0 - c) / 2.0);
}

double assoc_legendre(int l, int m, double x) {
  if (m < 0 || m > l) throw ContractError("assoc_legendre: need 0 <= m <= l");
  // P_m^m = (2m-1)!! (1-x^2)^{m/2}
  double pmm = 1.0;
  const double somx2 = std::sqrt(std::max(0.0, (1.0 - x) * (1.0 + x)));
  double fact = 1.0;
  for (int k = 1; k <= m; ++k) {
    pmm *= fact * somx2;
    fact += 2.0;
  }
  if (l == m) return pmm;
  double pmmp1 = x * (2.0 * m + 1.0) * pmm;
  if (l == m + 1) return pmmp1;
  double pll = 0.0;
  for (int ll = m + 2; ll <= l; ++ll) {
    pll = (x * (2.0 * ll - 1.0) * pmmp1 - (ll + m - 1.0) * pmm) / (ll - m);
    pmm = pmmp1;
    pmmp1 = pll;
  }
  return pll;
}

double spherical_harmonic(int l, int m, double theta, double phi) {
  if (l < 0 || std::abs(m) > l) throw ContractError("spherical_harmonic: need |m| <= l");
  const int am = std::abs(m);
  const double base = harmonic_norm(l, am) * assoc_legendre(l, am, std::cos(theta));
  if (m == 0) return base;
  if (m > 0) return std::sqrt(2.0) * base * std::cos(am * phi);
  return std::sqrt(2.0) * base * std::sin(am * phi);
}

double kernel_eval(const Kernel& kernel, GridKind kind, const GridPoint& p1, const GridPoint& p2) {
  if (const auto* leb = std::get_if<LebedevKernel>(&kernel)) {
    if (kind != GridKind::sphere_latlon) throw ContractError("Lebedev kernel requires a sphere grid");
    return lebedev_eval(p1.a * kDeg, p1.b * kDeg, p2.a * kDeg, p2.b * kDeg, leb->eta);
  }
  const auto& prod = std::get<PlanarProductKernel>(kernel);
  if (kind != GridKind::planar_unit_square) throw ContractError("planar product kernel requires a planar grid");
  return prod.row(p1.a, p2.a) * prod.col(p1.b, p2.b);
}

Mat raw_gram(const GridSpec& grid, const Kernel& kernel) {
  const int s = grid.size();
  if (s < 1 || grid.locations.size() != static_cast<std::size_t>(s)) throw ContractError("raw_gram: invalid grid");
  Mat k(s, s);
  for (int u = 0; u < s; ++u) {
    for (int v = u; v < s; ++v) {
      const double val = kernel_eval(kernel, grid.kind, grid.locations[u], grid.locations[v]);
      k(u, v) = val;
      k(v, u) = val;
    }
  }
  return k;
}

GramResult gram_matrix(const GridSpec& grid, const Kernel& kernel) {
  GramResult out{raw_gram(grid, kernel), 0.0};
  Eigen::SelfAdjointEigenSolver<Mat> es(out.gram, Eigen::EigenvaluesOnly);
  const double lo = es.eigenvalues().minCoeff();
  const double hi = es.eigenvalues().maxCoeff();
  const double floor = 1e-10 * std::max(hi, 1e-300);
  if (lo <= floor) {
    out.jitter = 2.0 * floor - lo;
    out.gram.diagonal().array() += out.jitter;
  }
  return out;
}

Truncation truncated_basis(const GridSpec& grid, const Kernel& kernel, int rank) {
  if (rank < 1) throw ContractError("truncated_basis: rank must be >= 1");
  const int s = grid.size();
  Truncation out;
  if (const auto* leb = std::get_if<LebedevKernel>(&kernel)) {
    const int degree = static_cast<int>(std::lround(std::sqrt(static_cast<double>(rank)))) - 1;
    if ((degree + 1) * (degree + 1) != rank) {
      throw ContractError("truncated_basis: Lebedev rank must be (L+1)^2, got " + std::to_string(rank));
    }
    struct Column {
      int l, m;
      double eig;
    };
    std::vector<Column> cols;
    for (int l = 0; l <= degree; ++l) {
      for (int m = -l; m <= l; ++m) cols.push_back({l, m, lebedev_eigenvalue(l, leb->eta)});
    }
    std::stable_sort(cols.begin(), cols.end(), [](const Column& x, const Column& y) { return x.eig > y.eig; });
    out.basis.resize(s, rank);
    out.eigenvalues.resize(rank);
    for (int r = 0; r < rank; ++r) {
      out.eigenvalues(r) = cols[r].eig;
      for (int u = 0; u < s; ++u) {
        const auto& p = grid.locations[u];
        out.basis(u, r) = spherical_harmonic(cols[r].l, cols[r].m, p.a * kDeg, p.b * kDeg);
      }
    }
    return out;
  }
  if (rank > s) throw ContractError("truncated_basis: planar rank cannot exceed grid size");
  const Mat k = gram_matrix(grid, kernel).gram;
  Eigen::SelfAdjointEigenSolver<Mat> es(k);
  out.basis.resize(s, rank);
  out.eigenvalues.resize(rank);
  for (int r = 0; r < rank; ++r) {
    out.basis.col(r) = es.eigenvectors().col(s - 1 - r);
    out.eigenvalues(r) = es.eigenvalues()(s - 1 - r);
  }
  return out;
}

KernelContext KernelContext::with_truncation(int rank) const {
  KernelContext out = *this;
  out.truncation = truncated_basis(grid, kernel, rank);
  return out;
}

KernelContext make_kernel_context(GridSpec grid, Kernel kernel, std::optional<int> rank) {
  KernelContext ctx;
  auto gram = gram_matrix(grid, kernel);
  ctx.grid = std::move(grid);
  ctx.kernel = std::move(kernel);
  ctx.gram = std::move(gram.gram);
  ctx.jitter = gram.jitter;
  ctx.decay_exponent = gram_decay_exponent(ctx.gram);
  if (rank) ctx.truncation = truncated_basis(ctx.grid, ctx.kernel, *rank);
  return ctx;
}

double gram_decay_exponent(const Mat& gram, int leading) {
  Eigen::SelfAdjointEigenSolver<Mat> es(gram, Eigen::EigenvaluesOnly);
  const Vec ev = es.eigenvalues().reverse();
  const int n = static_cast<int>(ev.size());
  const int use = leading > 0 ? std::min(leading, n) : std::max(2, n / 2);
  std::vector<double> xs, ys;
  for (int i = 0; i < use; ++i) {
    if (ev(i) <= 1e-12 * ev(0)) break;
    xs.push_back(std::log(i + 1.0));
    ys.push_back(std::log(ev(i)));
  }
  if (xs.size() < 2) return 0.0;
  const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / xs.size();
  const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / ys.size();
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxy += (xs[i] - mx) * (ys[i] - my);
    sxx += (xs[i] - mx) * (xs[i] - mx);
  }
  return -sxy / sxx;
}

nlohmann::json grid_to_json(const GridSpec& grid, const Kernel& kernel) {
  nlohmann::json j;
  j["kind"] = grid.kind == GridKind::sphere_latlon ? "sphere_latlon" : "planar_unit_square";
  j["M"] = grid.rows;
  j["N"] = grid.cols;
  if (const auto* leb = std::get_if<LebedevKernel>(&kernel)) {
    j["kernel"] = {{"family", "lebedev"}, {"eta", leb->eta}};
  } else {
    const auto& p = std::get<PlanarProductKernel>(kernel);
    auto ls = [](double l) { return std::isinf(l) ? nlohmann::json(nullptr) : nlohmann::json(l); };
    j["kernel"] = {{"family", "planar_product"},
                   {"lengthscales", {ls(p.row.lengthscale), ls(p.col.lengthscale)}},
                   {"nu", {p.row.nu, p.col.nu}}};
  }
  return j;
}

std::pair<GridSpec, Kernel> grid_from_json(const nlohmann::json& j) {
  try {
    const std::string kind = j.at("kind").get<std::string>();
    const int m = j.at("M").get<int>();
    const int n = j.at("N").get<int>();
    GridSpec grid;
    if (kind == "sphere_latlon") {
      grid = GridSpec::sphere(m, n);
    } else if (kind == "planar_unit_square") {
      grid = GridSpec::planar(m, n);
    } else {
      throw FormatError("grid.json: unknown kind '" + kind + "'");
    }
    const auto& kj = j.at("kernel");
    const std::string family = kj.at("family").get<std::string>();
    Kernel kernel;
    if (family == "lebedev") {
      kernel = LebedevKernel{kj.value("eta", 3.0)};
    } else if (family == "planar_product") {
      auto ls = [](const nlohmann::json& v) {
        return v.is_null() ? std::numeric_limits<double>::infinity() : v.get<double>();
      };
      Matern1D row, col;
      if (kj.contains("lengthscales")) {
        row.lengthscale = ls(kj["lengthscales"].at(0));
        col.lengthscale = ls(kj["lengthscales"].at(1));
      }
      if (kj.contains("nu")) {
        row.nu = kj["nu"].at(0).get<double>();
        col.nu = kj["nu"].at(1).get<double>();
      }
      kernel = planar_product_kernel(row, col);
    } else {
      throw FormatError("grid.json: unknown kernel family '" + family + "'");
    }
    return {grid, kernel};
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("grid.json: ") + e.what());
  }
}

}  // namespace marac
