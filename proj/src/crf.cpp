#include "scribda/crf.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "scribda/features.hpp"
#include "scribda/lattice.hpp"

namespace scribda {

namespace {

constexpr int kEnergyPixelCap = 5000;
constexpr double kConvergenceTol = 1e-5;

void check_instance(const DenseCrf& crf) {
  if (crf.unary.height != crf.image.height || crf.unary.width != crf.image.width) {
    throw DomainError("DenseCrf: unary and image shapes differ");
  }
  if (!(crf.sigma_alpha > 0.0) || !(crf.sigma_beta > 0.0)) {
    throw DomainError("DenseCrf: bandwidths must be positive");
  }
  if (crf.pairwise_weight < 0.0) throw DomainError("DenseCrf: pairwise weight must be >= 0");
  if (!crf.unary.all_finite()) throw DomainError("DenseCrf: non-finite unary costs");
}

void check_constraints(const DenseCrf& crf, const ScribbleMask* constraints) {
  if (!constraints) return;
  if (constraints->height != crf.unary.height || constraints->width != crf.unary.width) {
    throw DomainError("constraints shape differs from the CRF instance");
  }
  for (int v : constraints->entries) {
    if (v != ScribbleMask::kUnlabeled && (v < 0 || v >= crf.classes())) {
      throw DomainError("constraint label " + std::to_string(v) + " out of range");
    }
  }
}

// Pairwise kernel values for every unordered pixel pair, packed k > l.
std::vector<double> pairwise_cache(const DenseCrf& crf) {
  const FeaturePointSet f = bilateral_features(crf.image, crf.sigma_alpha, crf.sigma_beta);
  const int n = f.count;
  std::vector<double> cache(static_cast<std::size_t>(n) * (n - 1) / 2);
  std::size_t idx = 0;
  for (int k = 1; k < n; ++k) {
    const double* fk = &f.features[static_cast<std::size_t>(k) * f.dim];
    for (int l = 0; l < k; ++l) {
      const double* fl = &f.features[static_cast<std::size_t>(l) * f.dim];
      double dist2 = 0.0;
      for (int t = 0; t < f.dim; ++t) {
        const double df = fk[t] - fl[t];
        dist2 += df * df;
      }
      cache[idx++] = std::exp(-0.5 * dist2);
    }
  }
  return cache;
}

double energy_with_cache(const DenseCrf& crf, const std::vector<double>& cache,
                         const LabelMap& labels) {
  const int n = labels.pixels();
  const int C = crf.classes();
  double e = 0.0;
  for (int k = 0; k < n; ++k) {
    e += crf.unary.data[static_cast<std::size_t>(k) * C + labels.labels[k]];
  }
  double pair = 0.0;
  std::size_t idx = 0;
  for (int k = 1; k < n; ++k) {
    for (int l = 0; l < k; ++l, ++idx) {
      if (labels.labels[k] != labels.labels[l]) pair += cache[idx];
    }
  }
  // Both ordered pairs contribute.
  return e + 2.0 * crf.pairwise_weight * pair;
}

}  // namespace

double energy(const DenseCrf& crf, const LabelMap& labels) {
  check_instance(crf);
  if (labels.height != crf.unary.height || labels.width != crf.unary.width) {
    throw DomainError("energy: label shape differs from the CRF instance");
  }
  const int n = labels.pixels();
  if (n > kEnergyPixelCap) {
    throw RefusalError("energy: instance has " + std::to_string(n) + " pixels, cap is " +
                       std::to_string(kEnergyPixelCap));
  }
  for (int v : labels.labels) {
    if (v < 0 || v >= crf.classes()) throw DomainError("energy: label out of range");
  }
  return energy_with_cache(crf, pairwise_cache(crf), labels);
}

SoftLabeling mean_field(const DenseCrf& crf, const ScribbleMask* constraints, int iters,
                        double damping) {
  check_instance(crf);
  check_constraints(crf, constraints);
  if (iters < 1) throw DomainError("mean_field: iters must be >= 1");
  if (!(damping > 0.0) || damping > 1.0) throw DomainError("mean_field: damping must be in (0, 1]");

  const int n = crf.unary.pixels();
  const int C = crf.classes();

  auto clamp = [&](SoftLabeling& q) {
    if (!constraints) return;
    for (int k = 0; k < n; ++k) {
      const int y = constraints->entries[k];
      if (y == ScribbleMask::kUnlabeled) continue;
      for (int c = 0; c < C; ++c) {
        q.probs[static_cast<std::size_t>(k) * C + c] = (c == y) ? 1.0 : 0.0;
      }
    }
  };

  auto softmax_from = [&](const std::vector<double>& logits, SoftLabeling& q) {
    for (int k = 0; k < n; ++k) {
      const double* row = &logits[static_cast<std::size_t>(k) * C];
      double mx = row[0];
      for (int c = 1; c < C; ++c) mx = std::max(mx, row[c]);
      double sum = 0.0;
      for (int c = 0; c < C; ++c) {
        const double e = std::exp(row[c] - mx);
        q.probs[static_cast<std::size_t>(k) * C + c] = e;
        sum += e;
      }
      for (int c = 0; c < C; ++c) q.probs[static_cast<std::size_t>(k) * C + c] /= sum;
    }
  };

  SoftLabeling q(crf.unary.height, crf.unary.width, C, 0.0);
  {
    std::vector<double> neg_unary(crf.unary.data.size());
    for (std::size_t t = 0; t < neg_unary.size(); ++t) neg_unary[t] = -crf.unary.data[t];
    softmax_from(neg_unary, q);
  }
  clamp(q);
  if (crf.pairwise_weight == 0.0) return q;  // already the fixed point

  LatticeFilter filter(bilateral_features(crf.image, crf.sigma_alpha, crf.sigma_beta));

  std::vector<double> message_in(static_cast<std::size_t>(n) * C);
  std::vector<double> logits(static_cast<std::size_t>(n) * C);
  SoftLabeling q_new(crf.unary.height, crf.unary.width, C, 0.0);

  for (int it = 0; it < iters; ++it) {
    // Potts message: sum_{l != k} kernel(k, l) (1 - Q_l(c)), self removed after filtering.
    for (std::size_t t = 0; t < message_in.size(); ++t) message_in[t] = 1.0 - q.probs[t];
    std::vector<double> filtered = filter.apply(message_in, C);

    for (int k = 0; k < n; ++k) {
      for (int c = 0; c < C; ++c) {
        const std::size_t t = static_cast<std::size_t>(k) * C + c;
        const double msg = filtered[t] - message_in[t];
        logits[t] = -crf.unary.data[t] - crf.pairwise_weight * msg;
      }
    }
    softmax_from(logits, q_new);

    double max_change = 0.0;
    for (int k = 0; k < n; ++k) {
      double change = 0.0;
      for (int c = 0; c < C; ++c) {
        const std::size_t t = static_cast<std::size_t>(k) * C + c;
        const double blended = (1.0 - damping) * q.probs[t] + damping * q_new.probs[t];
        change += std::abs(blended - q.probs[t]);
        q.probs[t] = blended;
      }
      max_change = std::max(max_change, change);
    }
    clamp(q);
    if (max_change < kConvergenceTol) break;
  }
  return q;
}

LabelMap exhaustive_map(const DenseCrf& crf, const ScribbleMask* constraints) {
  check_instance(crf);
  check_constraints(crf, constraints);
  const int n = crf.unary.pixels();
  const int C = crf.classes();

  std::vector<int> free_pixels;
  LabelMap labels(crf.unary.height, crf.unary.width, 0);
  for (int k = 0; k < n; ++k) {
    const int y = constraints ? constraints->entries[k] : ScribbleMask::kUnlabeled;
    if (y == ScribbleMask::kUnlabeled) {
      free_pixels.push_back(k);
    } else {
      labels.labels[k] = y;
    }
  }

  double combos = 1.0;
  for (std::size_t t = 0; t < free_pixels.size(); ++t) {
    combos *= C;
    if (combos > static_cast<double>(1 << 20)) {
      throw RefusalError("exhaustive_map: more than 2^20 candidate labelings");
    }
  }

  const std::vector<double> cache = pairwise_cache(crf);

  LabelMap best = labels;
  double best_energy = energy_with_cache(crf, cache, labels);

  // Odometer over free pixels, last pixel fastest, i.e. lexicographic order of
  // the flattened labeling; strict improvement keeps the lexicographic minimum.
  const int nf = static_cast<int>(free_pixels.size());
  while (nf > 0) {
    int pos = nf - 1;
    while (pos >= 0) {
      int& v = labels.labels[free_pixels[pos]];
      if (v + 1 < C) {
        ++v;
        break;
      }
      v = 0;
      --pos;
    }
    if (pos < 0) break;
    const double e = energy_with_cache(crf, cache, labels);
    if (e < best_energy) {
      best_energy = e;
      best = labels;
    }
  }
  return best;
}

}  // namespace scribda
