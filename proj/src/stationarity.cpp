#include "marac/stationarity.hpp"

#include "marac/errors.hpp"

#include <cmath>
#include <string>

namespace marac {

double companion_radius(const std::vector<Mat>& blocks) {
  if (blocks.empty()) return 0.0;
  const Eigen::Index k = blocks.front().rows();
  for (const auto& b : blocks) {
    if (b.rows() != k || b.cols() != k) throw ShapeError("companion_radius: blocks must be square and equal size");
  }
  const Eigen::Index lags = static_cast<Eigen::Index>(blocks.size());
  if (lags == 1) return spectral_radius(blocks.front());
  Mat comp = Mat::Zero(k * lags, k * lags);
  for (Eigen::Index p = 0; p < lags; ++p) comp.block(0, p * k, k, k) = blocks[static_cast<std::size_t>(p)];
  comp.block(k, 0, k * (lags - 1), k * (lags - 1)).setIdentity();
  return spectral_radius(comp);
}

StationarityVerdict check_stationarity(const std::vector<std::pair<Mat, Mat>>& marac_ab,
                                       const std::vector<Mat>& aux_c, double margin) {
  StationarityVerdict v;
  v.margin = margin;
  std::vector<Mat> blocks;
  for (const auto& [a, b] : marac_ab) {
    if (a.rows() != a.cols() || b.rows() != b.cols()) throw ShapeError("check_stationarity: A and B must be square");
    blocks.push_back(kron(b, a));
  }
  v.marac_radius = companion_radius(blocks);
  v.aux_radius = companion_radius(aux_c);
  if (marac_ab.size() == 1) {
    const double product = spectral_radius(marac_ab[0].first) * spectral_radius(marac_ab[0].second);
    if (std::abs(product - v.marac_radius) > 1e-8 * std::max(1.0, product)) {
      throw InternalError("check_stationarity: companion radius " + std::to_string(v.marac_radius) +
                          " differs from rho(A) rho(B) " + std::to_string(product));
    }
  }
  v.stationary = v.marac_radius < 1.0 - margin && v.aux_radius < 1.0 - margin;
  return v;
}

}  // namespace marac
