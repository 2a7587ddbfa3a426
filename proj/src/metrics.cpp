#include "scribda/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace scribda {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void require_binary_pair(const LabelMap& a, const LabelMap& b) {
  if (a.height != b.height || a.width != b.width) {
    throw DomainError("metrics: mask shapes differ");
  }
  for (int v : a.labels) {
    if (v != 0 && v != 1) throw DomainError("metrics: masks must be binary");
  }
  for (int v : b.labels) {
    if (v != 0 && v != 1) throw DomainError("metrics: masks must be binary");
  }
}

std::vector<std::pair<int, int>> boundary_pixels(const LabelMap& mask) {
  std::vector<std::pair<int, int>> out;
  auto bg = [&](int y, int x) {
    if (y < 0 || y >= mask.height || x < 0 || x >= mask.width) return true;
    return mask.at(y, x) == 0;
  };
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) {
      if (mask.at(y, x) != 1) continue;
      if (bg(y - 1, x) || bg(y + 1, x) || bg(y, x - 1) || bg(y, x + 1)) out.emplace_back(y, x);
    }
  }
  return out;
}

// 1D squared distance transform with arbitrary sample positions (lower envelope
// of parabolas); infinite entries contribute no parabola.
void dt_1d(const std::vector<double>& f, const std::vector<double>& pos, std::vector<double>& out) {
  const int n = static_cast<int>(f.size());
  std::vector<int> finite;
  finite.reserve(n);
  for (int q = 0; q < n; ++q) {
    if (f[q] < kInf) finite.push_back(q);
  }
  if (finite.empty()) {
    std::fill(out.begin(), out.end(), kInf);
    return;
  }

  std::vector<int> v(finite.size());
  std::vector<double> z(finite.size() + 1);
  int k = 0;
  v[0] = finite[0];
  z[0] = -kInf;
  z[1] = kInf;
  for (std::size_t t = 1; t < finite.size(); ++t) {
    const int q = finite[t];
    double s = 0.0;
    while (true) {
      const int p = v[k];
      s = ((f[q] + pos[q] * pos[q]) - (f[p] + pos[p] * pos[p])) / (2.0 * pos[q] - 2.0 * pos[p]);
      if (s <= z[k]) {
        --k;
      } else {
        break;
      }
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = kInf;
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[k + 1] < pos[q]) ++k;
    const int p = v[k];
    out[q] = (pos[q] - pos[p]) * (pos[q] - pos[p]) + f[p];
  }
}

// Squared Euclidean distance (in mm) from every pixel to the nearest seed pixel.
std::vector<double> distance_transform(int h, int w, const std::vector<std::pair<int, int>>& seeds,
                                       Spacing spacing) {
  std::vector<double> d(static_cast<std::size_t>(h) * w, kInf);
  for (const auto& [y, x] : seeds) d[static_cast<std::size_t>(y) * w + x] = 0.0;

  std::vector<double> col(h), col_pos(h), col_out(h);
  for (int y = 0; y < h; ++y) col_pos[y] = y * spacing.dy;
  for (int x = 0; x < w; ++x) {
    for (int y = 0; y < h; ++y) col[y] = d[static_cast<std::size_t>(y) * w + x];
    dt_1d(col, col_pos, col_out);
    for (int y = 0; y < h; ++y) d[static_cast<std::size_t>(y) * w + x] = col_out[y];
  }

  std::vector<double> row(w), row_pos(w), row_out(w);
  for (int x = 0; x < w; ++x) row_pos[x] = x * spacing.dx;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) row[x] = d[static_cast<std::size_t>(y) * w + x];
    dt_1d(row, row_pos, row_out);
    for (int x = 0; x < w; ++x) d[static_cast<std::size_t>(y) * w + x] = row_out[x];
  }
  return d;
}

}  // namespace

double dice_percent(const LabelMap& pred, const LabelMap& truth) {
  require_binary_pair(pred, truth);
  long inter = 0, p = 0, t = 0;
  for (std::size_t i = 0; i < pred.labels.size(); ++i) {
    const bool bp = pred.labels[i] == 1;
    const bool bt = truth.labels[i] == 1;
    inter += (bp && bt);
    p += bp;
    t += bt;
  }
  if (p + t == 0) return 100.0;
  return 200.0 * static_cast<double>(inter) / static_cast<double>(p + t);
}

std::optional<double> assd_mm(const LabelMap& pred, const LabelMap& truth, Spacing spacing) {
  require_binary_pair(pred, truth);
  if (!(spacing.dy > 0.0) || !(spacing.dx > 0.0)) {
    throw DomainError("assd: spacing must be positive");
  }
  const auto bp = boundary_pixels(pred);
  const auto bt = boundary_pixels(truth);
  if (bp.empty() || bt.empty()) return std::nullopt;

  const auto d_to_truth = distance_transform(pred.height, pred.width, bt, spacing);
  const auto d_to_pred = distance_transform(pred.height, pred.width, bp, spacing);

  double sum_pt = 0.0;
  for (const auto& [y, x] : bp) {
    sum_pt += std::sqrt(d_to_truth[static_cast<std::size_t>(y) * pred.width + x]);
  }
  double sum_tp = 0.0;
  for (const auto& [y, x] : bt) {
    sum_tp += std::sqrt(d_to_pred[static_cast<std::size_t>(y) * pred.width + x]);
  }
  return 0.5 * (sum_pt / bp.size() + sum_tp / bt.size());
}

MetricResult evaluate_masks(const LabelMap& pred, const LabelMap& truth, Spacing spacing) {
  MetricResult r;
  r.spacing = spacing;
  r.dice = dice_percent(pred, truth);
  const auto a = assd_mm(pred, truth, spacing);
  r.assd_defined = a.has_value();
  r.assd = a.value_or(0.0);
  return r;
}

}  // namespace scribda
