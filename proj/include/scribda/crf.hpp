#pragma once

#include "scribda/grid.hpp"

namespace scribda {

// Fully-connected pairwise CRF over one image: per-pixel class costs plus a
// Potts penalty weighted by the bilateral kernel of the image.
struct DenseCrf {
  TensorGrid unary;  // H x W x C assignment costs
  TensorGrid image;  // H x W x channels, drives the bilateral kernel
  double sigma_alpha = 15.0;
  double sigma_beta = 3.0;
  double pairwise_weight = 1.0;

  int classes() const { return unary.channels; }
};

// Exact Gibbs energy: unary costs plus the Potts sum over ordered pixel pairs
// (self-pairs contribute 0). Brute force, refuses more than 5000 pixels.
double energy(const DenseCrf& crf, const LabelMap& labels);

// Parallel mean-field inference with damping; pixels annotated in `constraints`
// are clamped to their one-hot label throughout. Stops early when the largest
// per-pixel L1 change drops below 1e-5.
SoftLabeling mean_field(const DenseCrf& crf, const ScribbleMask* constraints, int iters,
                        double damping);

// Globally optimal constrained labeling by enumeration; ties break toward the
// lexicographically smallest flattened labeling. Refuses instances with more
// than 2^20 candidate labelings.
LabelMap exhaustive_map(const DenseCrf& crf, const ScribbleMask* constraints);

}  // namespace scribda
