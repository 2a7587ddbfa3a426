#include "scribda/features.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace scribda {

FeaturePointSet bilateral_features(const TensorGrid& image, double sigma_alpha,
                                   double sigma_beta) {
  if (!(sigma_alpha > 0.0) || !(sigma_beta > 0.0)) {
    throw DomainError("bilateral_features: bandwidths must be positive");
  }
  const int n = image.pixels();
  const int dim = image.channels + 2;
  std::vector<double> f(static_cast<std::size_t>(n) * dim);
  std::size_t idx = 0;
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      for (int c = 0; c < image.channels; ++c) f[idx++] = image.at(y, x, c) / sigma_alpha;
      f[idx++] = y / sigma_beta;
      f[idx++] = x / sigma_beta;
    }
  }
  return FeaturePointSet(n, dim, std::move(f));
}

DaFeatureSplit da_features(const TensorGrid& g_i, const TensorGrid& g_j,
                           const std::vector<int>& channel_subset, double sigma_gamma) {
  if (!(sigma_gamma > 0.0)) throw DomainError("da_features: sigma_gamma must be positive");
  if (channel_subset.empty()) throw DomainError("da_features: empty channel subset");
  for (int c : channel_subset) {
    if (c < 0 || c >= g_i.channels || c >= g_j.channels) {
      throw DomainError("da_features: channel index " + std::to_string(c) + " out of range");
    }
  }
  const int ni = g_i.pixels();
  const int nj = g_j.pixels();
  const int dim = static_cast<int>(channel_subset.size());

  // Pooled mean/std per selected channel; a near-constant channel is left centered
  // rather than amplified.
  std::vector<double> mean(dim, 0.0), inv_scale(dim, 0.0);
  for (int t = 0; t < dim; ++t) {
    const int c = channel_subset[t];
    double sum = 0.0, sum2 = 0.0;
    for (int k = 0; k < ni; ++k) {
      double v = g_i.data[static_cast<std::size_t>(k) * g_i.channels + c];
      sum += v;
      sum2 += v * v;
    }
    for (int k = 0; k < nj; ++k) {
      double v = g_j.data[static_cast<std::size_t>(k) * g_j.channels + c];
      sum += v;
      sum2 += v * v;
    }
    const double n = ni + nj;
    const double mu = sum / n;
    const double var = std::max(0.0, sum2 / n - mu * mu);
    const double sd = std::sqrt(var);
    mean[t] = mu;
    inv_scale[t] = 1.0 / (std::max(sd, 1e-12) * sigma_gamma);
  }

  std::vector<double> joint(static_cast<std::size_t>(ni + nj) * dim);
  auto emit = [&](const TensorGrid& g, int n, std::size_t base) {
    for (int k = 0; k < n; ++k) {
      for (int t = 0; t < dim; ++t) {
        double v = g.data[static_cast<std::size_t>(k) * g.channels + channel_subset[t]];
        joint[base + static_cast<std::size_t>(k) * dim + t] = (v - mean[t]) * inv_scale[t];
      }
    }
  };
  emit(g_i, ni, 0);
  emit(g_j, nj, static_cast<std::size_t>(ni) * dim);

  DaFeatureSplit out;
  out.count_first = ni;
  out.first = FeaturePointSet(
      ni, dim, std::vector<double>(joint.begin(), joint.begin() + static_cast<std::size_t>(ni) * dim));
  out.second = FeaturePointSet(
      nj, dim, std::vector<double>(joint.begin() + static_cast<std::size_t>(ni) * dim, joint.end()));
  out.joint = FeaturePointSet(ni + nj, dim, std::move(joint));
  return out;
}

}  // namespace scribda
