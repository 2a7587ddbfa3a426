#pragma once

#include <vector>

#include "scribda/common.hpp"

namespace scribda {

// Points in kernel feature space, already divided by the per-dimension bandwidth,
// so the pairwise weight is exp(-|f_k - f_l|^2 / 2).
struct FeaturePointSet {
  int count = 0;
  int dim = 0;
  std::vector<double> features;  // count x dim, point-major

  FeaturePointSet() = default;
  FeaturePointSet(int count, int dim, std::vector<double> values);

  double at(int point, int d) const {
    return features[static_cast<std::size_t>(point) * dim + d];
  }
};

// Max point count accepted by the exact O(N^2) paths.
inline constexpr int kBruteForceCap = 5000;

// Exact Gaussian transport: out_k = sum_l exp(-|f_k - f_l|^2 / 2) * v_l, self included
// with weight exactly 1. Values may carry several channels, interleaved per point.
std::vector<double> filter_bruteforce(const FeaturePointSet& points,
                                      const std::vector<double>& values, int channels = 1);

// Approximate Gaussian filtering via splat -> blur -> slice over a permutohedral
// lattice, linear in the number of points. Building embeds every point into the
// sum-zero hyperplane, snaps it to its enclosing simplex and records barycentric
// weights; blurring runs [1/2, 1, 1/2] passes along each lattice axis in
// ascending order so repeated builds are bit-identical. blur_rounds trades
// lattice size for accuracy; 0 picks a dimension-dependent default.
class LatticeFilter {
 public:
  static constexpr int kMaxDim = 16;

  explicit LatticeFilter(const FeaturePointSet& points, int blur_rounds = 0);

  int point_count() const { return n_; }
  int dim() const { return d_; }
  int lattice_points() const { return m_; }

  // Raw filtered values; linear in the value argument, multi-channel interleaved.
  std::vector<double> apply(const std::vector<double>& values, int channels = 1) const;

  // Filtered all-ones vector, cached at build time. Strictly positive for sane inputs.
  const std::vector<double>& row_mass() const { return row_mass_; }

  // Canonical W*v: row-normalized kernel with the unit self-weight removed,
  // out_k = (raw_k - v_k) / D_k. Throws NumericalError when a normalizer
  // falls below 1e-12.
  std::vector<double> apply_normalized_no_self(const std::vector<double>& values,
                                               int channels = 1) const;

 private:
  std::vector<double> apply_with_scale(const std::vector<double>& values, int channels,
                                       double scale) const;

  int n_ = 0;
  int d_ = 0;
  int m_ = 0;
  int rounds_ = 1;
  std::vector<int> offsets_;        // n x (d+1) enclosing-simplex vertex ids
  std::vector<double> weights_;     // n x (d+1) barycentric weights
  std::vector<int> blur_n1_;        // (d+1) x m neighbor ids along each axis, -1 = none
  std::vector<int> blur_n2_;
  double output_scale_ = 1.0;       // calibrated so the effective self-weight is 1
  std::vector<double> row_mass_;
};

// Shared entry point for code that runs either exactly or through the lattice.
// Exact mode refuses point sets above kBruteForceCap.
class GaussianKernel {
 public:
  GaussianKernel(FeaturePointSet points, bool exact);

  int count() const { return points_.count; }
  bool exact() const { return exact_; }

  std::vector<double> raw(const std::vector<double>& values, int channels = 1) const;
  const std::vector<double>& row_mass() const { return row_mass_; }

 private:
  bool exact_;
  FeaturePointSet points_;
  std::vector<LatticeFilter> lattice_;  // empty in exact mode
  std::vector<double> row_mass_;
};

}  // namespace scribda
