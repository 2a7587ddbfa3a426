#pragma once

#include <string>
#include <vector>

#include "scribda/grid.hpp"

namespace scribda {

enum class DaMode { kStrictCross, kJoint };

// Kernel bandwidths and regularizer weights shared by the relaxed energies.
struct KernelSpec {
  double sigma_alpha = 15.0;  // intensity bandwidth of the bilateral kernel
  double sigma_beta = 3.0;    // spatial bandwidth, pixels
  double sigma_gamma = 0.1;   // feature bandwidth after per-channel standardization
  double lambda_i = 0.05;
  double lambda_da = 0.05;
  DaMode da_mode = DaMode::kStrictCross;
  int da_channels = 2;

  void validate() const;
};

struct ValueGrad {
  double value = 0.0;
  SoftLabeling grad;
};

struct PairValueGrad {
  double value = 0.0;
  SoftLabeling grad_i;
  SoftLabeling grad_j;
};

// -(1/|annotated|) sum over annotated pixels of log p_k(y_k); probabilities are
// clipped at 1e-12 before the log. Gradient is zero outside the scribbles.
ValueGrad partial_cross_entropy(const SoftLabeling& p, const ScribbleMask& scribbles);

// 1 - mean over classes of soft Dice restricted to the scribbled pixels,
// smoothing 1e-5 in numerator and denominator.
ValueGrad partial_dice(const SoftLabeling& p, const ScribbleMask& scribbles);

// Relaxed bilateral disagreement sum_c p_c^T W (1 - p_c) / N with W the
// row-normalized zero-diagonal bilateral kernel. `exact` selects the brute-force
// kernel instead of the lattice.
ValueGrad r_i(const SoftLabeling& p, const TensorGrid& image, const KernelSpec& kernel,
              bool exact);

// Cross-image disagreement over the concatenated pair in feature space.
// Strict-cross keeps only pairs with one endpoint in each image; joint uses the
// full concatenated matrix. Kernel features are constants for differentiation.
PairValueGrad r_da(const SoftLabeling& p_i, const SoftLabeling& p_j, const TensorGrid& g_i,
                   const TensorGrid& g_j, const KernelSpec& kernel,
                   const std::vector<int>& channel_subset, bool exact);

// sum_k sum_c y log(y / p) with 0 log 0 = 0, ratios clipped at 1e-12.
double kl_divergence(const SoftLabeling& y_hat, const SoftLabeling& p);

enum class DataLoss { kCrossEntropy, kDice };

struct BatchItem {
  const SoftLabeling* p = nullptr;
  const ScribbleMask* scribbles = nullptr;  // full mask for source items
  const TensorGrid* image = nullptr;
  const TensorGrid* features = nullptr;  // penultimate activations g
  bool target_domain = false;
};

struct LossReport {
  double total = 0.0;
  double data_term = 0.0;
  double r_i_term = 0.0;   // unweighted sum over target items
  double r_da_term = 0.0;  // unweighted sum over unordered target pairs
  std::vector<SoftLabeling> gradients;
};

// Regularized batch loss: data term over every item, R_I per target item and
// R_DA per unordered target pair plus per target-source pair, where the source
// side enters as its ground-truth one-hot labeling (its proposal is constrained
// to the full annotation, so no gradient reaches it). An empty channel subset
// defaults to the first da_channels feature channels.
LossReport total_loss(const std::vector<BatchItem>& batch, const KernelSpec& kernel,
                      DataLoss data_loss, bool da_enabled,
                      const std::vector<int>& channel_subset = {}, bool exact = false);

std::string to_string(DaMode mode);
std::string to_string(DataLoss loss);

}  // namespace scribda
