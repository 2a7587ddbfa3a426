#pragma once

#include <vector>

#include "scribda/grid.hpp"
#include "scribda/lattice.hpp"

namespace scribda {

// Bilateral kernel argument per pixel: every image channel divided by sigma_alpha,
// followed by the (y, x) position divided by sigma_beta.
FeaturePointSet bilateral_features(const TensorGrid& image, double sigma_alpha,
                                   double sigma_beta);

// Cross-image kernel arguments: the selected feature channels of both grids,
// standardized per channel over the pooled pixels of the pair, then divided by
// sigma_gamma. Positions are deliberately absent. `joint` stacks the first
// image's pixels before the second's.
struct DaFeatureSplit {
  FeaturePointSet joint;
  FeaturePointSet first;
  FeaturePointSet second;
  int count_first = 0;
};

DaFeatureSplit da_features(const TensorGrid& g_i, const TensorGrid& g_j,
                           const std::vector<int>& channel_subset, double sigma_gamma);

}  // namespace scribda
