#include "scribda/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "scribda/features.hpp"
#include "scribda/lattice.hpp"

namespace scribda {

namespace {

constexpr double kLogClip = 1e-12;
constexpr double kDiceSmooth = 1e-5;
constexpr double kMassFloor = 1e-12;

void require_matching(const SoftLabeling& p, const ScribbleMask& s, const char* op) {
  if (p.height != s.height || p.width != s.width) {
    throw DomainError(std::string(op) + ": probability and scribble shapes differ");
  }
}

void check_masses(const std::vector<double>& mass) {
  for (double d : mass) {
    if (d < kMassFloor) throw NumericalError("kernel normalizer collapsed");
  }
}

}  // namespace

void KernelSpec::validate() const {
  if (!(sigma_alpha > 0.0) || !(sigma_beta > 0.0) || !(sigma_gamma > 0.0)) {
    throw DomainError("KernelSpec: bandwidths must be positive");
  }
  if (lambda_i < 0.0 || lambda_da < 0.0) {
    throw DomainError("KernelSpec: regularizer weights must be nonnegative");
  }
  if (da_channels < 1) throw DomainError("KernelSpec: da_channels must be >= 1");
}

ValueGrad partial_cross_entropy(const SoftLabeling& p, const ScribbleMask& scribbles) {
  require_matching(p, scribbles, "partial_cross_entropy");
  p.check_simplex(1e-4);  // loose enough for finite-difference probing
  const int n = p.pixels();
  const int C = p.classes;
  const int annotated = scribbles.labeled_count();
  if (annotated == 0) throw DomainError("partial_cross_entropy: no annotated pixels");

  ValueGrad out;
  out.grad = SoftLabeling(p.height, p.width, C, 0.0);
  double value = 0.0;
  for (int k = 0; k < n; ++k) {
    const int y = scribbles.entries[k];
    if (y == ScribbleMask::kUnlabeled) continue;
    if (y >= C) throw DomainError("partial_cross_entropy: scribble label out of range");
    const double q = std::max(p.probs[static_cast<std::size_t>(k) * C + y], kLogClip);
    value -= std::log(q);
    out.grad.probs[static_cast<std::size_t>(k) * C + y] = -1.0 / (q * annotated);
  }
  out.value = value / annotated;
  return out;
}

ValueGrad partial_dice(const SoftLabeling& p, const ScribbleMask& scribbles) {
  require_matching(p, scribbles, "partial_dice");
  p.check_simplex(1e-4);
  const int n = p.pixels();
  const int C = p.classes;
  if (scribbles.labeled_count() == 0) throw DomainError("partial_dice: no annotated pixels");

  // Soft Dice per class over the annotated pixels only.
  std::vector<double> inter(C, 0.0), denom(C, 0.0);
  for (int k = 0; k < n; ++k) {
    const int y = scribbles.entries[k];
    if (y == ScribbleMask::kUnlabeled) continue;
    if (y >= C) throw DomainError("partial_dice: scribble label out of range");
    for (int c = 0; c < C; ++c) {
      const double q = p.probs[static_cast<std::size_t>(k) * C + c];
      inter[c] += q * (c == y ? 1.0 : 0.0);
      denom[c] += q + (c == y ? 1.0 : 0.0);
    }
  }
  std::vector<double> num(C), den(C);
  double value = 1.0;
  for (int c = 0; c < C; ++c) {
    num[c] = 2.0 * inter[c] + kDiceSmooth;
    den[c] = denom[c] + kDiceSmooth;
    value -= (num[c] / den[c]) / C;
  }

  ValueGrad out;
  out.value = value;
  out.grad = SoftLabeling(p.height, p.width, C, 0.0);
  for (int k = 0; k < n; ++k) {
    const int y = scribbles.entries[k];
    if (y == ScribbleMask::kUnlabeled) continue;
    for (int c = 0; c < C; ++c) {
      const double t = (c == y) ? 1.0 : 0.0;
      // d/dq of num/den with num and den both linear in q.
      const double d = (2.0 * t * den[c] - num[c]) / (den[c] * den[c]);
      out.grad.probs[static_cast<std::size_t>(k) * C + c] = -d / C;
    }
  }
  return out;
}

ValueGrad r_i(const SoftLabeling& p, const TensorGrid& image, const KernelSpec& kernel,
              bool exact) {
  if (p.height != image.height || p.width != image.width) {
    throw DomainError("r_i: probability and image shapes differ");
  }
  kernel.validate();
  const int n = p.pixels();
  const int C = p.classes;

  GaussianKernel kern(bilateral_features(image, kernel.sigma_alpha, kernel.sigma_beta), exact);
  const std::vector<double>& mass = kern.row_mass();
  check_masses(mass);

  // Channels [q_1..q_C, q_1/D..q_C/D] filtered in one pass; then
  //   W q_c      = (raw(q_c) - q_c) / D
  //   W^T q_c    = raw(q_c / D) - q_c / D
  //   W 1        = (D - 1) / D
  const int ch = 2 * C;
  std::vector<double> in(static_cast<std::size_t>(n) * ch);
  for (int k = 0; k < n; ++k) {
    for (int c = 0; c < C; ++c) {
      const double q = p.probs[static_cast<std::size_t>(k) * C + c];
      in[static_cast<std::size_t>(k) * ch + c] = q;
      in[static_cast<std::size_t>(k) * ch + C + c] = q / mass[k];
    }
  }
  const std::vector<double> raw = kern.raw(in, ch);

  ValueGrad out;
  out.grad = SoftLabeling(p.height, p.width, C, 0.0);
  double value = 0.0;
  for (int k = 0; k < n; ++k) {
    const double w_ones = (mass[k] - 1.0) / mass[k];
    for (int c = 0; c < C; ++c) {
      const double q = p.probs[static_cast<std::size_t>(k) * C + c];
      const double wq = (raw[static_cast<std::size_t>(k) * ch + c] - q) / mass[k];
      const double wtq = raw[static_cast<std::size_t>(k) * ch + C + c] - q / mass[k];
      value += q * (w_ones - wq);
      out.grad.probs[static_cast<std::size_t>(k) * C + c] = (w_ones - wq - wtq) / n;
    }
  }
  out.value = value / n;
  return out;
}

PairValueGrad r_da(const SoftLabeling& p_i, const SoftLabeling& p_j, const TensorGrid& g_i,
                   const TensorGrid& g_j, const KernelSpec& kernel,
                   const std::vector<int>& channel_subset, bool exact) {
  if (p_i.classes != p_j.classes) throw DomainError("r_da: class counts differ");
  if (p_i.height != g_i.height || p_i.width != g_i.width || p_j.height != g_j.height ||
      p_j.width != g_j.width) {
    throw DomainError("r_da: probability and feature shapes differ");
  }
  kernel.validate();

  const DaFeatureSplit feats = da_features(g_i, g_j, channel_subset, kernel.sigma_gamma);
  const int ni = p_i.pixels();
  const int nj = p_j.pixels();
  const int m = ni + nj;
  const int C = p_i.classes;
  const int ch = 2 * C;

  GaussianKernel joint(feats.joint, exact);
  const std::vector<double>& mass = joint.row_mass();
  check_masses(mass);

  // Stacked proposals q = [p_i; p_j], channels [q_c, q_c / D].
  std::vector<double> in(static_cast<std::size_t>(m) * ch);
  auto fill = [&](const SoftLabeling& p, int n, int base) {
    for (int k = 0; k < n; ++k) {
      for (int c = 0; c < C; ++c) {
        const double q = p.probs[static_cast<std::size_t>(k) * C + c];
        in[static_cast<std::size_t>(base + k) * ch + c] = q;
        in[static_cast<std::size_t>(base + k) * ch + C + c] = q / mass[base + k];
      }
    }
  };
  fill(p_i, ni, 0);
  fill(p_j, nj, ni);

  std::vector<double> raw = joint.raw(in, ch);

  // kernel_ones: the row mass of the effective matrix before self handling.
  std::vector<double> kernel_ones;
  bool subtract_self = false;
  if (kernel.da_mode == DaMode::kStrictCross) {
    // Cross response = joint response minus the within-image responses; the
    // within blocks carry the diagonal, so nothing else to remove.
    GaussianKernel within_i(feats.first, exact);
    GaussianKernel within_j(feats.second, exact);
    const std::vector<double> raw_i =
        within_i.raw(std::vector<double>(in.begin(), in.begin() + static_cast<std::size_t>(ni) * ch), ch);
    const std::vector<double> raw_j =
        within_j.raw(std::vector<double>(in.begin() + static_cast<std::size_t>(ni) * ch, in.end()), ch);
    for (std::size_t t = 0; t < raw_i.size(); ++t) raw[t] -= raw_i[t];
    const std::size_t off = static_cast<std::size_t>(ni) * ch;
    for (std::size_t t = 0; t < raw_j.size(); ++t) raw[off + t] -= raw_j[t];

    kernel_ones.resize(m);
    for (int k = 0; k < ni; ++k) kernel_ones[k] = mass[k] - within_i.row_mass()[k];
    for (int k = 0; k < nj; ++k) kernel_ones[ni + k] = mass[ni + k] - within_j.row_mass()[k];
  } else {
    kernel_ones.resize(m);
    for (int k = 0; k < m; ++k) kernel_ones[k] = mass[k] - 1.0;
    subtract_self = true;
  }

  PairValueGrad out;
  out.grad_i = SoftLabeling(p_i.height, p_i.width, C, 0.0);
  out.grad_j = SoftLabeling(p_j.height, p_j.width, C, 0.0);
  double value = 0.0;
  for (int k = 0; k < m; ++k) {
    const double w_ones = kernel_ones[k] / mass[k];
    const bool first = k < ni;
    const SoftLabeling& p = first ? p_i : p_j;
    SoftLabeling& grad = first ? out.grad_i : out.grad_j;
    const int local = first ? k : k - ni;
    for (int c = 0; c < C; ++c) {
      const double q = p.probs[static_cast<std::size_t>(local) * C + c];
      double r = raw[static_cast<std::size_t>(k) * ch + c];
      double rt = raw[static_cast<std::size_t>(k) * ch + C + c];
      if (subtract_self) {
        r -= q;
        rt -= q / mass[k];
      }
      const double wq = r / mass[k];
      const double wtq = rt;
      value += q * (w_ones - wq);
      grad.probs[static_cast<std::size_t>(local) * C + c] = (w_ones - wq - wtq) / m;
    }
  }
  out.value = value / m;
  return out;
}

double kl_divergence(const SoftLabeling& y_hat, const SoftLabeling& p) {
  if (y_hat.height != p.height || y_hat.width != p.width || y_hat.classes != p.classes) {
    throw DomainError("kl_divergence: shapes differ");
  }
  double total = 0.0;
  for (std::size_t t = 0; t < y_hat.probs.size(); ++t) {
    const double y = y_hat.probs[t];
    if (y <= 0.0) continue;
    const double q = std::max(p.probs[t], kLogClip);
    total += y * std::log(std::max(y, kLogClip) / q);
  }
  return total;
}

LossReport total_loss(const std::vector<BatchItem>& batch, const KernelSpec& kernel,
                      DataLoss data_loss, bool da_enabled,
                      const std::vector<int>& channel_subset, bool exact) {
  if (batch.empty()) throw DomainError("total_loss: empty batch");
  kernel.validate();

  std::vector<int> targets;
  for (int i = 0; i < static_cast<int>(batch.size()); ++i) {
    if (batch[i].target_domain) targets.push_back(i);
  }
  if (da_enabled && targets.size() < 2) {
    throw DomainError("total_loss: DA requires at least 2 target items");
  }

  LossReport report;
  report.gradients.reserve(batch.size());

  for (const BatchItem& item : batch) {
    ValueGrad data = (data_loss == DataLoss::kDice) ? partial_dice(*item.p, *item.scribbles)
                                                    : partial_cross_entropy(*item.p, *item.scribbles);
    report.data_term += data.value;
    report.gradients.push_back(std::move(data.grad));
  }

  if (kernel.lambda_i > 0.0) {
    for (int i : targets) {
      ValueGrad ri = r_i(*batch[i].p, *batch[i].image, kernel, exact);
      report.r_i_term += ri.value;
      SoftLabeling& g = report.gradients[i];
      for (std::size_t t = 0; t < g.probs.size(); ++t) {
        g.probs[t] += kernel.lambda_i * ri.grad.probs[t];
      }
    }
  }

  if (da_enabled) {
    std::vector<int> subset = channel_subset;
    if (subset.empty()) {
      const int avail = batch[targets[0]].features->channels;
      const int take = std::min(kernel.da_channels, avail);
      subset.resize(take);
      std::iota(subset.begin(), subset.end(), 0);
    }
    for (std::size_t a = 0; a < targets.size(); ++a) {
      for (std::size_t b = a + 1; b < targets.size(); ++b) {
        const int i = targets[a];
        const int j = targets[b];
        PairValueGrad rd = r_da(*batch[i].p, *batch[j].p, *batch[i].features,
                                *batch[j].features, kernel, subset, exact);
        report.r_da_term += rd.value;
        SoftLabeling& gi = report.gradients[i];
        SoftLabeling& gj = report.gradients[j];
        for (std::size_t t = 0; t < gi.probs.size(); ++t) {
          gi.probs[t] += kernel.lambda_da * rd.grad_i.probs[t];
        }
        for (std::size_t t = 0; t < gj.probs.size(); ++t) {
          gj.probs[t] += kernel.lambda_da * rd.grad_j.probs[t];
        }
      }
    }
    // Cross-domain pairs: the fully-annotated side enters as its constrained
    // proposal, i.e. the ground-truth one-hot labeling, so only the target
    // member receives a gradient and annotations ride the feature kernel across
    // domains.
    for (std::size_t s = 0; s < batch.size(); ++s) {
      if (batch[s].target_domain) continue;
      const ScribbleMask& labels = *batch[s].scribbles;
      LabelMap crisp(labels.height, labels.width, 0);
      for (int k = 0; k < labels.pixels(); ++k) {
        if (labels.entries[k] == ScribbleMask::kUnlabeled) {
          throw DomainError("total_loss: source item in a DA batch must be fully annotated");
        }
        crisp.labels[k] = labels.entries[k];
      }
      const SoftLabeling source_hot = one_hot(crisp, batch[s].p->classes);
      for (int i : targets) {
        PairValueGrad rd = r_da(*batch[i].p, source_hot, *batch[i].features,
                                *batch[s].features, kernel, subset, exact);
        report.r_da_term += rd.value;
        SoftLabeling& gi = report.gradients[i];
        for (std::size_t t = 0; t < gi.probs.size(); ++t) {
          gi.probs[t] += kernel.lambda_da * rd.grad_i.probs[t];
        }
      }
    }
  }

  report.total = report.data_term + kernel.lambda_i * report.r_i_term +
                 kernel.lambda_da * report.r_da_term;
  return report;
}

std::string to_string(DaMode mode) {
  return mode == DaMode::kStrictCross ? "strict-cross" : "joint";
}

std::string to_string(DataLoss loss) {
  return loss == DataLoss::kDice ? "dice" : "cross-entropy";
}

}  // namespace scribda
