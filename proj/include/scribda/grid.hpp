#pragma once

#include <cstddef>
#include <vector>

#include "scribda/common.hpp"

namespace scribda {

// Dense H x W x C scalar field, 64-bit floats, row-major (y, x, c).
struct TensorGrid {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<double> data;

  TensorGrid() = default;
  TensorGrid(int h, int w, int c, double fill = 0.0);
  TensorGrid(int h, int w, int c, std::vector<double> values);

  int pixels() const { return height * width; }

  std::size_t index(int y, int x, int c) const {
    return (static_cast<std::size_t>(y) * width + x) * channels + c;
  }
  double at(int y, int x, int c) const { return data[index(y, x, c)]; }
  double& at(int y, int x, int c) { return data[index(y, x, c)]; }

  bool all_finite() const;
  double min_value() const;
  double max_value() const;
};

// Per-pixel crisp class assignment.
struct LabelMap {
  int height = 0;
  int width = 0;
  std::vector<int> labels;

  LabelMap() = default;
  LabelMap(int h, int w, int fill = 0);
  LabelMap(int h, int w, std::vector<int> values);

  int pixels() const { return height * width; }
  int at(int y, int x) const { return labels[static_cast<std::size_t>(y) * width + x]; }
  int& at(int y, int x) { return labels[static_cast<std::size_t>(y) * width + x]; }
  int max_label() const;
};

// Per-pixel probability simplex over C classes.
struct SoftLabeling {
  int height = 0;
  int width = 0;
  int classes = 0;
  std::vector<double> probs;

  SoftLabeling() = default;
  SoftLabeling(int h, int w, int c, double fill = 0.0);

  int pixels() const { return height * width; }
  std::size_t index(int y, int x, int c) const {
    return (static_cast<std::size_t>(y) * width + x) * classes + c;
  }
  double at(int y, int x, int c) const { return probs[index(y, x, c)]; }
  double& at(int y, int x, int c) { return probs[index(y, x, c)]; }

  // Throws DomainError when any pixel vector is negative or does not sum to 1 +- tol.
  void check_simplex(double tol = 1e-9) const;
};

// Partial labeling: class index per pixel or kUnlabeled.
struct ScribbleMask {
  static constexpr int kUnlabeled = -1;

  int height = 0;
  int width = 0;
  std::vector<int> entries;

  ScribbleMask() = default;
  ScribbleMask(int h, int w);

  int pixels() const { return height * width; }
  int at(int y, int x) const { return entries[static_cast<std::size_t>(y) * width + x]; }
  int& at(int y, int x) { return entries[static_cast<std::size_t>(y) * width + x]; }
  int labeled_count() const;
};

// Embeds a crisp labeling at the simplex vertices. Throws DomainError when a label >= classes.
SoftLabeling one_hot(const LabelMap& labels, int classes);

// Per-pixel index of the maximal probability; ties break toward the lowest class index.
LabelMap argmax_labeling(const SoftLabeling& p);

// Marks every pixel of the map as annotated.
ScribbleMask full_mask(const LabelMap& labels);

}  // namespace scribda
