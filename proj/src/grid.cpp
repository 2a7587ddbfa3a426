#include "scribda/grid.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace scribda {

namespace {

std::size_t checked_extent(int h, int w, int c) {
  if (h <= 0 || w <= 0 || c <= 0) {
    throw DomainError("grid dimensions must be positive");
  }
  return static_cast<std::size_t>(h) * w * c;
}

}  // namespace

TensorGrid::TensorGrid(int h, int w, int c, double fill)
    : height(h), width(w), channels(c), data(checked_extent(h, w, c), fill) {}

TensorGrid::TensorGrid(int h, int w, int c, std::vector<double> values)
    : height(h), width(w), channels(c), data(std::move(values)) {
  if (data.size() != checked_extent(h, w, c)) {
    throw DomainError("TensorGrid data length does not match dimensions");
  }
}

bool TensorGrid::all_finite() const {
  return std::all_of(data.begin(), data.end(), [](double v) { return std::isfinite(v); });
}

double TensorGrid::min_value() const {
  return *std::min_element(data.begin(), data.end());
}

double TensorGrid::max_value() const {
  return *std::max_element(data.begin(), data.end());
}

LabelMap::LabelMap(int h, int w, int fill)
    : height(h), width(w), labels(checked_extent(h, w, 1), fill) {}

LabelMap::LabelMap(int h, int w, std::vector<int> values)
    : height(h), width(w), labels(std::move(values)) {
  if (labels.size() != checked_extent(h, w, 1)) {
    throw DomainError("LabelMap data length does not match dimensions");
  }
}

int LabelMap::max_label() const {
  return *std::max_element(labels.begin(), labels.end());
}

SoftLabeling::SoftLabeling(int h, int w, int c, double fill)
    : height(h), width(w), classes(c), probs(checked_extent(h, w, c), fill) {}

void SoftLabeling::check_simplex(double tol) const {
  const int n = pixels();
  for (int k = 0; k < n; ++k) {
    double sum = 0.0;
    for (int c = 0; c < classes; ++c) {
      double v = probs[static_cast<std::size_t>(k) * classes + c];
      if (!(v >= 0.0) || !std::isfinite(v)) {
        throw DomainError("SoftLabeling has a negative or non-finite probability");
      }
      sum += v;
    }
    if (std::abs(sum - 1.0) > tol) {
      throw DomainError("SoftLabeling pixel does not sum to 1 (got " + std::to_string(sum) + ")");
    }
  }
}

ScribbleMask::ScribbleMask(int h, int w)
    : height(h), width(w), entries(checked_extent(h, w, 1), kUnlabeled) {}

int ScribbleMask::labeled_count() const {
  return static_cast<int>(std::count_if(entries.begin(), entries.end(),
                                        [](int v) { return v != kUnlabeled; }));
}

SoftLabeling one_hot(const LabelMap& labels, int classes) {
  if (classes < 1) throw DomainError("one_hot: classes must be >= 1");
  SoftLabeling out(labels.height, labels.width, classes, 0.0);
  const int n = labels.pixels();
  for (int k = 0; k < n; ++k) {
    int l = labels.labels[k];
    if (l < 0 || l >= classes) {
      throw DomainError("one_hot: label " + std::to_string(l) + " out of range for " +
                        std::to_string(classes) + " classes");
    }
    out.probs[static_cast<std::size_t>(k) * classes + l] = 1.0;
  }
  return out;
}

LabelMap argmax_labeling(const SoftLabeling& p) {
  p.check_simplex();
  LabelMap out(p.height, p.width, 0);
  const int n = p.pixels();
  for (int k = 0; k < n; ++k) {
    const double* row = &p.probs[static_cast<std::size_t>(k) * p.classes];
    int best = 0;
    for (int c = 1; c < p.classes; ++c) {
      if (row[c] > row[best]) best = c;
    }
    out.labels[k] = best;
  }
  return out;
}

ScribbleMask full_mask(const LabelMap& labels) {
  ScribbleMask out(labels.height, labels.width);
  out.entries.assign(labels.labels.begin(), labels.labels.end());
  return out;
}

}  // namespace scribda
