#pragma once

#include <optional>

#include "scribda/grid.hpp"

namespace scribda {

struct Spacing {
  double dy = 1.0;  // mm per pixel, row direction
  double dx = 1.0;
};

struct MetricResult {
  double dice = 0.0;           // percentage
  double assd = 0.0;           // mm, meaningful only when assd_defined
  bool assd_defined = false;
  Spacing spacing;
};

// 200 |P i T| / (|P| + |T|); both masks empty scores 100 by convention.
double dice_percent(const LabelMap& pred, const LabelMap& truth);

// Average symmetric surface distance between the foreground boundaries, exact
// nearest distances via a Euclidean distance transform. Boundary pixels are
// foreground pixels with at least one background 4-neighbor; outside the image
// counts as background. Returns nullopt when either mask is empty.
std::optional<double> assd_mm(const LabelMap& pred, const LabelMap& truth, Spacing spacing);

MetricResult evaluate_masks(const LabelMap& pred, const LabelMap& truth, Spacing spacing);

}  // namespace scribda
