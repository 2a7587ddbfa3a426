#include "scribda/lattice.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>

namespace scribda {

namespace {

// Open-addressing table mapping integer lattice keys (first d coordinates; the
// last one is implied by the sum-zero constraint) to dense indices in insertion
// order, which keeps downstream loops deterministic.
class LatticeHashTable {
 public:
  LatticeHashTable(int key_dim, std::size_t expected) : key_dim_(key_dim) {
    capacity_ = 16;
    while (capacity_ < expected * 4) capacity_ *= 2;
    slots_.assign(capacity_, -1);
    keys_.reserve(expected * key_dim_);
  }

  int size() const { return static_cast<int>(count_); }

  const std::int32_t* key(int entry) const {
    return &keys_[static_cast<std::size_t>(entry) * key_dim_];
  }

  int find(const std::int32_t* key) const {
    std::size_t slot = hash(key) & (capacity_ - 1);
    while (true) {
      int entry = slots_[slot];
      if (entry < 0) return -1;
      if (equals(entry, key)) return entry;
      slot = (slot + 1) & (capacity_ - 1);
    }
  }

  int find_or_insert(const std::int32_t* key) {
    std::size_t slot = hash(key) & (capacity_ - 1);
    while (true) {
      int entry = slots_[slot];
      if (entry < 0) {
        keys_.insert(keys_.end(), key, key + key_dim_);
        slots_[slot] = static_cast<int>(count_);
        ++count_;
        if (count_ * 2 > capacity_) grow();
        return static_cast<int>(count_) - 1;
      }
      if (equals(entry, key)) return entry;
      slot = (slot + 1) & (capacity_ - 1);
    }
  }

 private:
  std::size_t hash(const std::int32_t* key) const {
    std::uint64_t h = 0;
    for (int i = 0; i < key_dim_; ++i) {
      h += static_cast<std::uint32_t>(key[i]);
      h *= 2654435761ull;
    }
    return static_cast<std::size_t>(h);
  }

  bool equals(int entry, const std::int32_t* key) const {
    const std::int32_t* stored = this->key(entry);
    for (int i = 0; i < key_dim_; ++i) {
      if (stored[i] != key[i]) return false;
    }
    return true;
  }

  void grow() {
    capacity_ *= 2;
    slots_.assign(capacity_, -1);
    for (std::size_t e = 0; e < count_; ++e) {
      std::size_t slot = hash(key(static_cast<int>(e))) & (capacity_ - 1);
      while (slots_[slot] >= 0) slot = (slot + 1) & (capacity_ - 1);
      slots_[slot] = static_cast<int>(e);
    }
  }

  int key_dim_;
  std::size_t count_ = 0;
  std::size_t capacity_;
  std::vector<std::int32_t> keys_;
  std::vector<int> slots_;
};

constexpr int kMaxLatticePoints = 8 << 20;

}  // namespace

FeaturePointSet::FeaturePointSet(int count_, int dim_, std::vector<double> values)
    : count(count_), dim(dim_), features(std::move(values)) {
  if (count < 1 || dim < 1) throw DomainError("FeaturePointSet needs count >= 1 and dim >= 1");
  if (features.size() != static_cast<std::size_t>(count) * dim) {
    throw DomainError("FeaturePointSet data length does not match count x dim");
  }
  for (double v : features) {
    if (!std::isfinite(v)) throw DomainError("FeaturePointSet has a non-finite feature");
  }
}

std::vector<double> filter_bruteforce(const FeaturePointSet& points,
                                      const std::vector<double>& values, int channels) {
  const int n = points.count;
  const int d = points.dim;
  if (channels < 1) throw DomainError("filter_bruteforce: channels must be >= 1");
  if (values.size() != static_cast<std::size_t>(n) * channels) {
    throw DomainError("filter_bruteforce: values length does not match point count");
  }
  if (n > kBruteForceCap) {
    throw RefusalError("filter_bruteforce: " + std::to_string(n) + " points exceeds cap of " +
                       std::to_string(kBruteForceCap));
  }
  std::vector<double> out(static_cast<std::size_t>(n) * channels, 0.0);
  for (int k = 0; k < n; ++k) {
    const double* fk = &points.features[static_cast<std::size_t>(k) * d];
    double* ok = &out[static_cast<std::size_t>(k) * channels];
    for (int l = 0; l < n; ++l) {
      const double* fl = &points.features[static_cast<std::size_t>(l) * d];
      double dist2 = 0.0;
      for (int t = 0; t < d; ++t) {
        double df = fk[t] - fl[t];
        dist2 += df * df;
      }
      const double w = std::exp(-0.5 * dist2);
      const double* vl = &values[static_cast<std::size_t>(l) * channels];
      for (int c = 0; c < channels; ++c) ok[c] += w * vl[c];
    }
  }
  return out;
}

LatticeFilter::LatticeFilter(const FeaturePointSet& points, int blur_rounds)
    : n_(points.count), d_(points.dim) {
  if (d_ > kMaxDim) {
    throw RefusalError("LatticeFilter: dim " + std::to_string(d_) + " exceeds cap of " +
                       std::to_string(kMaxDim));
  }
  // More rounds mean a finer lattice relative to the kernel and a smoother
  // (more binomial) per-axis profile; defaults are tuned so the brute-force
  // oracle suite passes with margin. Higher dimensions need the extra rounds.
  rounds_ = blur_rounds > 0 ? blur_rounds : (d_ <= 2 ? 5 : (d_ == 3 ? 6 : 7));

  const int dp1 = d_ + 1;

  // Canonical simplex vertex offsets, indexed by remainder and coordinate rank.
  std::vector<std::int32_t> canonical(static_cast<std::size_t>(dp1) * dp1);
  for (int i = 0; i < dp1; ++i) {
    for (int j = 0; j <= d_ - i; ++j) canonical[static_cast<std::size_t>(i) * dp1 + j] = i;
    for (int j = d_ - i + 1; j <= d_; ++j) {
      canonical[static_cast<std::size_t>(i) * dp1 + j] = i - dp1;
    }
  }

  // Embedding scale: one blur round contributes (d+1)^2/2 to the kernel
  // variance along each hyperplane axis and the splat/slice interpolation the
  // remaining (d+1)^2/6, so unit feature distance must map to this much
  // embedded distance. The realized kernel runs slightly wide of that design
  // variance (the binomial blur is not exactly Gaussian); the correction factor
  // is fitted against the brute-force oracle.
  constexpr double kBandwidthCorrection = 1.02;
  const double inv_std_dev = kBandwidthCorrection * dp1 * std::sqrt(rounds_ * 0.5 + 1.0 / 6.0);
  std::vector<double> scale(d_);
  for (int i = 0; i < d_; ++i) {
    scale[i] = inv_std_dev / std::sqrt(static_cast<double>(i + 1) * (i + 2));
  }

  offsets_.resize(static_cast<std::size_t>(n_) * dp1);
  weights_.resize(static_cast<std::size_t>(n_) * dp1);

  LatticeHashTable table(d_, static_cast<std::size_t>(n_) * dp1);
  std::vector<double> elevated(dp1), rem0(dp1), bary(dp1 + 1);
  std::vector<int> rank(dp1);
  std::vector<std::int32_t> key(d_);

  for (int k = 0; k < n_; ++k) {
    // Embed into the sum-zero hyperplane.
    double sm = 0.0;
    for (int j = d_; j > 0; --j) {
      double cf = points.at(k, j - 1) * scale[j - 1];
      elevated[j] = sm - j * cf;
      sm += cf;
    }
    elevated[0] = sm;

    // Round to the nearest remainder-zero lattice point.
    int sum = 0;
    for (int i = 0; i < dp1; ++i) {
      double v = elevated[i] / dp1;
      double up = std::ceil(v) * dp1;
      double down = std::floor(v) * dp1;
      double r = (up - elevated[i] < elevated[i] - down) ? up : down;
      rem0[i] = r;
      sum += static_cast<int>(std::lround(r)) / dp1;
    }

    // Rank residual coordinates; this identifies the enclosing simplex.
    std::fill(rank.begin(), rank.end(), 0);
    for (int i = 0; i < d_; ++i) {
      double di = elevated[i] - rem0[i];
      for (int j = i + 1; j < dp1; ++j) {
        if (di < elevated[j] - rem0[j]) {
          ++rank[i];
        } else {
          ++rank[j];
        }
      }
    }

    // If rounding left the hyperplane, walk back onto it.
    for (int i = 0; i < dp1; ++i) {
      rank[i] += sum;
      if (rank[i] < 0) {
        rank[i] += dp1;
        rem0[i] += dp1;
      } else if (rank[i] > d_) {
        rank[i] -= dp1;
        rem0[i] -= dp1;
      }
    }

    // Barycentric coordinates within the simplex.
    std::fill(bary.begin(), bary.end(), 0.0);
    for (int i = 0; i < dp1; ++i) {
      double v = (elevated[i] - rem0[i]) / dp1;
      bary[d_ - rank[i]] += v;
      bary[d_ - rank[i] + 1] -= v;
    }
    bary[0] += 1.0 + bary[dp1];

    for (int r = 0; r < dp1; ++r) {
      for (int i = 0; i < d_; ++i) {
        key[i] = static_cast<std::int32_t>(std::lround(rem0[i])) +
                 canonical[static_cast<std::size_t>(r) * dp1 + rank[i]];
      }
      offsets_[static_cast<std::size_t>(k) * dp1 + r] = table.find_or_insert(key.data());
      weights_[static_cast<std::size_t>(k) * dp1 + r] = bary[r];
    }
  }

  // Multi-round blurring moves mass through cells the splat never touched;
  // grow the populated set so those intermediates exist.
  std::vector<std::int32_t> nkey(d_);
  for (int pass = 0; pass < rounds_ - 1; ++pass) {
    const int current = table.size();
    for (int i = 0; i < current; ++i) {
      for (int j = 0; j < dp1; ++j) {
        const std::int32_t* kk = table.key(i);
        for (int t = 0; t < d_; ++t) nkey[t] = kk[t] + 1;
        if (j < d_) nkey[j] = kk[j] - d_;
        table.find_or_insert(nkey.data());
        kk = table.key(i);  // insertion may have reallocated key storage
        for (int t = 0; t < d_; ++t) nkey[t] = kk[t] - 1;
        if (j < d_) nkey[j] = kk[j] + d_;
        table.find_or_insert(nkey.data());
      }
    }
    if (table.size() > kMaxLatticePoints) {
      throw RefusalError("LatticeFilter: lattice grew past " +
                         std::to_string(kMaxLatticePoints) + " cells");
    }
  }

  m_ = table.size();

  // Neighbor pairs along each of the d+1 lattice axes for the blur passes.
  blur_n1_.resize(static_cast<std::size_t>(dp1) * m_);
  blur_n2_.resize(static_cast<std::size_t>(dp1) * m_);
  for (int j = 0; j < dp1; ++j) {
    for (int i = 0; i < m_; ++i) {
      const std::int32_t* kk = table.key(i);
      for (int t = 0; t < d_; ++t) nkey[t] = kk[t] + 1;
      if (j < d_) nkey[j] = kk[j] - d_;
      blur_n1_[static_cast<std::size_t>(j) * m_ + i] = table.find(nkey.data());
      for (int t = 0; t < d_; ++t) nkey[t] = kk[t] - 1;
      if (j < d_) nkey[j] = kk[j] + d_;
      blur_n2_[static_cast<std::size_t>(j) * m_ + i] = table.find(nkey.data());
    }
  }

  // The blur only reproduces the Gaussian up to a constant, so pin the scale by
  // probing delta responses at a deterministic spread of points: the probe's
  // own response is the effective self-weight, which the exact kernel fixes
  // at 1.
  {
    const int probes = std::min(n_, 64);
    std::vector<double> deltas(static_cast<std::size_t>(n_) * probes, 0.0);
    std::vector<int> probe_points(probes);
    for (int p = 0; p < probes; ++p) {
      const int point = static_cast<int>((static_cast<long long>(p) * n_) / probes);
      probe_points[p] = point;
      deltas[static_cast<std::size_t>(point) * probes + p] = 1.0;
    }
    const std::vector<double> responses = apply_with_scale(deltas, probes, 1.0);
    double self_sum = 0.0;
    for (int p = 0; p < probes; ++p) {
      self_sum += responses[static_cast<std::size_t>(probe_points[p]) * probes + p];
    }
    const double self_mean = self_sum / probes;
    if (self_mean < 1e-12) throw NumericalError("lattice self-weight calibration collapsed");
    output_scale_ = 1.0 / self_mean;
  }

  row_mass_ = apply(std::vector<double>(static_cast<std::size_t>(n_), 1.0), 1);
}

std::vector<double> LatticeFilter::apply(const std::vector<double>& values, int channels) const {
  return apply_with_scale(values, channels, output_scale_);
}

std::vector<double> LatticeFilter::apply_with_scale(const std::vector<double>& values,
                                                    int channels, double scale) const {
  if (channels < 1) throw DomainError("LatticeFilter::apply: channels must be >= 1");
  if (values.size() != static_cast<std::size_t>(n_) * channels) {
    throw DomainError("LatticeFilter::apply: values length does not match point count");
  }
  const int dp1 = d_ + 1;

  // Row 0 is a zero guard standing in for missing blur neighbors.
  std::vector<double> lat(static_cast<std::size_t>(m_ + 1) * channels, 0.0);
  std::vector<double> tmp(static_cast<std::size_t>(m_ + 1) * channels, 0.0);

  for (int k = 0; k < n_; ++k) {
    const double* vk = &values[static_cast<std::size_t>(k) * channels];
    for (int r = 0; r < dp1; ++r) {
      const int o = offsets_[static_cast<std::size_t>(k) * dp1 + r] + 1;
      const double w = weights_[static_cast<std::size_t>(k) * dp1 + r];
      double* row = &lat[static_cast<std::size_t>(o) * channels];
      for (int c = 0; c < channels; ++c) row[c] += w * vk[c];
    }
  }

  // Ascending axis order every round keeps repeated builds bit-identical.
  for (int round = 0; round < rounds_; ++round) {
    for (int j = 0; j < dp1; ++j) {
      const int* n1 = &blur_n1_[static_cast<std::size_t>(j) * m_];
      const int* n2 = &blur_n2_[static_cast<std::size_t>(j) * m_];
      for (int i = 0; i < m_; ++i) {
        const double* mid = &lat[static_cast<std::size_t>(i + 1) * channels];
        const double* a = &lat[static_cast<std::size_t>(n1[i] + 1) * channels];
        const double* b = &lat[static_cast<std::size_t>(n2[i] + 1) * channels];
        double* out = &tmp[static_cast<std::size_t>(i + 1) * channels];
        for (int c = 0; c < channels; ++c) out[c] = mid[c] + 0.5 * (a[c] + b[c]);
      }
      std::swap(lat, tmp);
    }
  }

  std::vector<double> out(static_cast<std::size_t>(n_) * channels, 0.0);
  for (int k = 0; k < n_; ++k) {
    double* ok = &out[static_cast<std::size_t>(k) * channels];
    for (int r = 0; r < dp1; ++r) {
      const int o = offsets_[static_cast<std::size_t>(k) * dp1 + r] + 1;
      const double w = weights_[static_cast<std::size_t>(k) * dp1 + r] * scale;
      const double* row = &lat[static_cast<std::size_t>(o) * channels];
      for (int c = 0; c < channels; ++c) ok[c] += w * row[c];
    }
  }
  return out;
}

std::vector<double> LatticeFilter::apply_normalized_no_self(const std::vector<double>& values,
                                                            int channels) const {
  std::vector<double> out = apply(values, channels);
  for (int k = 0; k < n_; ++k) {
    const double mass = row_mass_[k];
    if (mass < 1e-12) {
      throw NumericalError("lattice normalizer collapsed at point " + std::to_string(k));
    }
    for (int c = 0; c < channels; ++c) {
      const std::size_t idx = static_cast<std::size_t>(k) * channels + c;
      out[idx] = (out[idx] - values[idx]) / mass;
    }
  }
  return out;
}

GaussianKernel::GaussianKernel(FeaturePointSet points, bool exact)
    : exact_(exact), points_(std::move(points)) {
  if (exact_) {
    if (points_.count > kBruteForceCap) {
      throw RefusalError("GaussianKernel: exact mode refuses " + std::to_string(points_.count) +
                         " points (cap " + std::to_string(kBruteForceCap) + ")");
    }
    row_mass_ = filter_bruteforce(points_, std::vector<double>(points_.count, 1.0), 1);
  } else {
    lattice_.emplace_back(points_);
    row_mass_ = lattice_.front().row_mass();
  }
}

std::vector<double> GaussianKernel::raw(const std::vector<double>& values, int channels) const {
  if (exact_) return filter_bruteforce(points_, values, channels);
  return lattice_.front().apply(values, channels);
}

}  // namespace scribda
