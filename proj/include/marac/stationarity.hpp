#pragma once

// Joint stationarity of the matrix autoregression and the auxiliary VAR,
// checked through companion-matrix spectral radii.

#include "marac/linalg.hpp"

#include <utility>
#include <vector>

namespace marac {

// Spectral radius of the kL x kL companion matrix with `blocks` in the first
// block row and identities on the block sub-diagonal. Empty input gives 0.
double companion_radius(const std::vector<Mat>& blocks);

struct StationarityVerdict {
  double marac_radius = 0.0;
  double aux_radius = 0.0;
  double margin = 1e-6;
  bool stationary = true;
};

// The auxiliary tensor coefficients do not affect stationarity, so they are
// not an input.
StationarityVerdict check_stationarity(const std::vector<std::pair<Mat, Mat>>& marac_ab,
                                       const std::vector<Mat>& aux_c, double margin = 1e-6);

}  // namespace marac
