#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "scribda/features.hpp"
#include "scribda/losses.hpp"
#include "test_util.hpp"

using namespace scribda;

namespace {

KernelSpec desk_kernel() {
  KernelSpec k;
  k.sigma_alpha = 0.2;
  k.sigma_beta = 2.0;
  k.sigma_gamma = 0.5;
  k.lambda_i = 0.05;
  k.lambda_da = 0.07;
  return k;
}

ScribbleMask sparse_scribbles(std::mt19937_64& rng, int h, int w, int classes, int count) {
  ScribbleMask s(h, w);
  std::uniform_int_distribution<int> pos(0, h * w - 1);
  std::uniform_int_distribution<int> lab(0, classes - 1);
  while (s.labeled_count() < count) s.entries[pos(rng)] = lab(rng);
  return s;
}

// Dense-matrix evaluation of sum_c q_c' W (1 - q_c) for an explicit W.
double quadform(const std::vector<double>& w, const SoftLabeling& q) {
  const int n = q.pixels();
  double total = 0.0;
  for (int c = 0; c < q.classes; ++c) {
    for (int a = 0; a < n; ++a) {
      const double qa = q.probs[static_cast<std::size_t>(a) * q.classes + c];
      if (qa == 0.0) continue;
      for (int b = 0; b < n; ++b) {
        const double qb = q.probs[static_cast<std::size_t>(b) * q.classes + c];
        total += qa * w[static_cast<std::size_t>(a) * n + b] * (1.0 - qb);
      }
    }
  }
  return total;
}

}  // namespace

TEST_CASE("partial cross-entropy hand values") {
  LabelMap m(1, 2, std::vector<int>{0, 1});
  SoftLabeling agree = one_hot(m, 2);
  const ScribbleMask full = full_mask(m);
  CHECK(partial_cross_entropy(agree, full).value == doctest::Approx(0.0).epsilon(1e-9));

  SoftLabeling uniform(1, 2, 2, 0.5);
  ScribbleMask one_pixel(1, 2);
  one_pixel.at(0, 0) = 1;
  const ValueGrad vg = partial_cross_entropy(uniform, one_pixel);
  CHECK(vg.value == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  // Gradient untouched outside the scribbles.
  CHECK(vg.grad.at(0, 1, 0) == 0.0);
  CHECK(vg.grad.at(0, 1, 1) == 0.0);

  ScribbleMask empty(1, 2);
  CHECK_THROWS_AS(partial_cross_entropy(uniform, empty), DomainError);
}

TEST_CASE("partial dice hand values") {
  LabelMap m(2, 2, std::vector<int>{0, 1, 1, 0});
  SoftLabeling agree = one_hot(m, 2);
  CHECK(partial_dice(agree, full_mask(m)).value <= 1e-4);

  // Uniform prediction, 4 pixels all scribbled class 0: dice_0 = 2*0.5*4/(0.5*4+4),
  // dice_1 ~ 0.
  SoftLabeling uniform(2, 2, 2, 0.5);
  LabelMap zeros(2, 2, 0);
  const double got = partial_dice(uniform, full_mask(zeros)).value;
  CHECK(got == doctest::Approx(1.0 - 0.5 * (2.0 * 0.5 * 4 / (0.5 * 4 + 4))).epsilon(1e-3));

  ScribbleMask empty(2, 2);
  CHECK_THROWS_AS(partial_dice(uniform, empty), DomainError);
}

TEST_CASE("data losses match finite differences") {
  std::mt19937_64 rng(71);
  SoftLabeling p = testutil::random_soft(rng, 5, 5, 3);
  const ScribbleMask scribbles = sparse_scribbles(rng, 5, 5, 3, 9);

  for (int which = 0; which < 2; ++which) {
    auto loss = [&] {
      return which == 0 ? partial_cross_entropy(p, scribbles).value
                        : partial_dice(p, scribbles).value;
    };
    const ValueGrad vg = which == 0 ? partial_cross_entropy(p, scribbles)
                                    : partial_dice(p, scribbles);
    std::uniform_int_distribution<int> pick(0, static_cast<int>(p.probs.size()) - 1);
    for (int checked = 0; checked < 20; ++checked) {
      const int t = pick(rng);
      const double numeric = testutil::central_diff(loss, p.probs[t]);
      CHECK(testutil::rel_err(vg.grad.probs[t], numeric) < 1e-4);
    }
  }
}

TEST_CASE("r_i vanishes on constant labelings") {
  std::mt19937_64 rng(3);
  const TensorGrid image = testutil::random_grid(rng, 4, 4, 1);
  LabelMap constant(4, 4, 1);
  const ValueGrad vg = r_i(one_hot(constant, 3), image, desk_kernel(), true);
  CHECK(vg.value == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("r_i closed form at the uniform labeling") {
  std::mt19937_64 rng(5);
  const TensorGrid image = testutil::random_grid(rng, 2, 2, 1);
  const KernelSpec spec = desk_kernel();
  const int C = 3;
  SoftLabeling uniform(2, 2, C, 1.0 / C);

  const auto kernel = testutil::dense_kernel(
      bilateral_features(image, spec.sigma_alpha, spec.sigma_beta));
  double mean_row_mass = 0.0;
  for (int a = 0; a < 4; ++a) {
    double mass = 0.0;
    for (int b = 0; b < 4; ++b) mass += kernel[static_cast<std::size_t>(a) * 4 + b];
    mean_row_mass += (mass - 1.0) / mass;  // row mass of the zero-diagonal W
  }
  mean_row_mass /= 4.0;

  const double expected = (C - 1.0) / C * mean_row_mass;
  CHECK(r_i(uniform, image, spec, true).value == doctest::Approx(expected).epsilon(1e-9));
}

TEST_CASE("r_i nonnegative and lattice agrees with exact") {
  std::mt19937_64 rng(9);
  const KernelSpec spec = desk_kernel();
  for (int trial = 0; trial < 3; ++trial) {
    const TensorGrid image = testutil::random_grid(rng, 16, 16, 1);
    const SoftLabeling p = testutil::random_soft(rng, 16, 16, 2);
    const ValueGrad exact = r_i(p, image, spec, true);
    const ValueGrad fast = r_i(p, image, spec, false);
    CHECK(exact.value >= 0.0);
    CHECK(std::abs(fast.value - exact.value) / exact.value < 0.05);
  }
}

TEST_CASE("r_i matches the dense-matrix oracle and finite differences") {
  std::mt19937_64 rng(11);
  const KernelSpec spec = desk_kernel();
  const TensorGrid image = testutil::random_grid(rng, 5, 5, 1);
  SoftLabeling p = testutil::random_soft(rng, 5, 5, 2);
  const int n = 25;

  const auto kernel = testutil::dense_kernel(
      bilateral_features(image, spec.sigma_alpha, spec.sigma_beta));
  const auto w = testutil::normalized_no_self_matrix(kernel, n);
  CHECK(r_i(p, image, spec, true).value == doctest::Approx(quadform(w, p) / n).epsilon(1e-12));

  const ValueGrad vg = r_i(p, image, spec, true);
  auto loss = [&] { return r_i(p, image, spec, true).value; };
  std::uniform_int_distribution<int> pick(0, static_cast<int>(p.probs.size()) - 1);
  for (int i = 0; i < 20; ++i) {
    const int t = pick(rng);
    const double numeric = testutil::central_diff(loss, p.probs[t]);
    CHECK(testutil::rel_err(vg.grad.probs[t], numeric) < 1e-4);
  }
}

TEST_CASE("r_i relaxation is tight at one-hot labelings") {
  std::mt19937_64 rng(13);
  const KernelSpec spec = desk_kernel();
  for (int trial = 0; trial < 10; ++trial) {
    const TensorGrid image = testutil::random_grid(rng, 4, 4, 1);
    LabelMap m(4, 4, 0);
    std::uniform_int_distribution<int> lab(0, 1);
    for (int& v : m.labels) v = lab(rng);

    const auto kernel = testutil::dense_kernel(
        bilateral_features(image, spec.sigma_alpha, spec.sigma_beta));
    const auto w = testutil::normalized_no_self_matrix(kernel, 16);
    double potts = 0.0;
    for (int a = 0; a < 16; ++a) {
      for (int b = 0; b < 16; ++b) {
        if (m.labels[a] != m.labels[b]) potts += w[static_cast<std::size_t>(a) * 16 + b];
      }
    }
    CHECK(std::abs(r_i(one_hot(m, 2), image, spec, true).value - potts / 16.0) <= 1e-9);
  }
}

TEST_CASE("r_da vanishes on identical constant labelings") {
  std::mt19937_64 rng(17);
  const TensorGrid g_i = testutil::random_grid(rng, 4, 4, 3);
  const TensorGrid g_j = testutil::random_grid(rng, 4, 4, 3);
  LabelMap ones_map(4, 4, 1);
  const SoftLabeling p = one_hot(ones_map, 2);

  for (DaMode mode : {DaMode::kStrictCross, DaMode::kJoint}) {
    KernelSpec spec = desk_kernel();
    spec.da_mode = mode;
    const PairValueGrad vg = r_da(p, p, g_i, g_j, spec, {0, 2}, true);
    CHECK(vg.value == doctest::Approx(0.0).epsilon(1e-12));
  }
}

TEST_CASE("r_da strict-cross goes to zero for disconnected feature clouds") {
  // Constant 0 vs constant 1 channels standardize to two far-apart clusters.
  TensorGrid g_i(3, 3, 1, 0.0);
  TensorGrid g_j(3, 3, 1, 1.0);
  std::mt19937_64 rng(19);
  const SoftLabeling p_i = testutil::random_soft(rng, 3, 3, 2);
  const SoftLabeling p_j = testutil::random_soft(rng, 3, 3, 2);
  KernelSpec spec = desk_kernel();
  spec.sigma_gamma = 0.1;
  const PairValueGrad vg = r_da(p_i, p_j, g_i, g_j, spec, {0}, true);
  CHECK(std::abs(vg.value) < 1e-12);
}

TEST_CASE("r_da matches the dense-matrix oracle in both modes") {
  std::mt19937_64 rng(23);
  KernelSpec spec = desk_kernel();
  const TensorGrid g_i = testutil::random_grid(rng, 4, 4, 3);
  const TensorGrid g_j = testutil::random_grid(rng, 4, 4, 3);
  SoftLabeling p_i = testutil::random_soft(rng, 4, 4, 2);
  SoftLabeling p_j = testutil::random_soft(rng, 4, 4, 2);
  const std::vector<int> subset{0, 1};
  const int ni = 16, m = 32;

  const DaFeatureSplit feats = da_features(g_i, g_j, subset, spec.sigma_gamma);
  const auto kernel = testutil::dense_kernel(feats.joint);

  SoftLabeling q(1, m, 2, 0.0);
  for (int k = 0; k < ni; ++k) {
    for (int c = 0; c < 2; ++c) {
      q.probs[static_cast<std::size_t>(k) * 2 + c] = p_i.probs[static_cast<std::size_t>(k) * 2 + c];
      q.probs[static_cast<std::size_t>(ni + k) * 2 + c] =
          p_j.probs[static_cast<std::size_t>(k) * 2 + c];
    }
  }

  for (DaMode mode : {DaMode::kStrictCross, DaMode::kJoint}) {
    spec.da_mode = mode;
    std::vector<double> w(kernel.size(), 0.0);
    for (int a = 0; a < m; ++a) {
      double mass = 0.0;
      for (int b = 0; b < m; ++b) mass += kernel[static_cast<std::size_t>(a) * m + b];
      for (int b = 0; b < m; ++b) {
        const bool cross = (a < ni) != (b < ni);
        double k = kernel[static_cast<std::size_t>(a) * m + b];
        if (mode == DaMode::kStrictCross && !cross) k = 0.0;
        if (mode == DaMode::kJoint && a == b) k = 0.0;
        w[static_cast<std::size_t>(a) * m + b] = k / mass;
      }
    }
    const double expected = quadform(w, q) / m;
    const PairValueGrad exact = r_da(p_i, p_j, g_i, g_j, spec, subset, true);
    CHECK(exact.value == doctest::Approx(expected).epsilon(1e-9));

    const PairValueGrad fast = r_da(p_i, p_j, g_i, g_j, spec, subset, false);
    CHECK(std::abs(fast.value - expected) / std::max(expected, 1e-12) < 0.05);
  }
}

TEST_CASE("r_da is symmetric under swapping the pair") {
  std::mt19937_64 rng(29);
  KernelSpec spec = desk_kernel();
  const TensorGrid g_i = testutil::random_grid(rng, 3, 4, 2);
  const TensorGrid g_j = testutil::random_grid(rng, 4, 3, 2);
  const SoftLabeling p_i = testutil::random_soft(rng, 3, 4, 2);
  const SoftLabeling p_j = testutil::random_soft(rng, 4, 3, 2);
  const PairValueGrad ab = r_da(p_i, p_j, g_i, g_j, spec, {0, 1}, true);
  const PairValueGrad ba = r_da(p_j, p_i, g_j, g_i, spec, {0, 1}, true);
  CHECK(ab.value == doctest::Approx(ba.value).epsilon(1e-9));
}

TEST_CASE("r_da gradients match finite differences in both modes") {
  std::mt19937_64 rng(31);
  KernelSpec spec = desk_kernel();
  const TensorGrid g_i = testutil::random_grid(rng, 3, 3, 2);
  const TensorGrid g_j = testutil::random_grid(rng, 3, 3, 2);
  SoftLabeling p_i = testutil::random_soft(rng, 3, 3, 2);
  SoftLabeling p_j = testutil::random_soft(rng, 3, 3, 2);
  const std::vector<int> subset{0, 1};

  for (DaMode mode : {DaMode::kStrictCross, DaMode::kJoint}) {
    spec.da_mode = mode;
    const PairValueGrad vg = r_da(p_i, p_j, g_i, g_j, spec, subset, true);
    auto loss = [&] { return r_da(p_i, p_j, g_i, g_j, spec, subset, true).value; };
    std::uniform_int_distribution<int> pick(0, static_cast<int>(p_i.probs.size()) - 1);
    for (int i = 0; i < 10; ++i) {
      int t = pick(rng);
      CHECK(testutil::rel_err(vg.grad_i.probs[t], testutil::central_diff(loss, p_i.probs[t])) <
            1e-4);
      t = pick(rng);
      CHECK(testutil::rel_err(vg.grad_j.probs[t], testutil::central_diff(loss, p_j.probs[t])) <
            1e-4);
    }
  }

  CHECK_THROWS_AS(r_da(p_i, p_j, g_i, g_j, spec, {0, 5}, true), DomainError);
}

TEST_CASE("kl divergence basics") {
  std::mt19937_64 rng(37);
  const SoftLabeling p = testutil::random_soft(rng, 4, 4, 3);
  CHECK(kl_divergence(p, p) == doctest::Approx(0.0).epsilon(1e-12));

  LabelMap m(2, 2, std::vector<int>{0, 1, 0, 1});
  const SoftLabeling hot = one_hot(m, 2);
  const SoftLabeling uniform(2, 2, 2, 0.5);
  CHECK(kl_divergence(hot, uniform) == doctest::Approx(4.0 * std::log(2.0)).epsilon(1e-12));

  for (int trial = 0; trial < 100; ++trial) {
    const SoftLabeling a = testutil::random_soft(rng, 3, 3, 2);
    const SoftLabeling b = testutil::random_soft(rng, 3, 3, 2);
    CHECK(kl_divergence(a, b) >= -1e-12);
  }
}

TEST_CASE("total_loss composition") {
  std::mt19937_64 rng(41);
  const int h = 4, w = 4, C = 2;

  struct Item {
    TensorGrid image, g;
    SoftLabeling p;
    ScribbleMask scribbles;
    bool target;
  };
  std::vector<Item> items;
  for (int i = 0; i < 4; ++i) {
    Item it{testutil::random_grid(rng, h, w, 1), testutil::random_grid(rng, h, w, 4),
            testutil::random_soft(rng, h, w, C), ScribbleMask(), i >= 2};
    if (it.target) {
      it.scribbles = sparse_scribbles(rng, h, w, C, 5);
    } else {
      LabelMap m(h, w, 0);
      std::uniform_int_distribution<int> lab(0, C - 1);
      for (int& v : m.labels) v = lab(rng);
      it.scribbles = full_mask(m);
    }
    items.push_back(std::move(it));
  }
  auto batch_of = [&](int from, int to) {
    std::vector<BatchItem> batch;
    for (int i = from; i < to; ++i) {
      batch.push_back(BatchItem{&items[i].p, &items[i].scribbles, &items[i].image, &items[i].g,
                                items[i].target});
    }
    return batch;
  };

  KernelSpec spec = desk_kernel();
  const std::vector<int> subset{0, 2};

  SUBCASE("zero weights reduce to the data term") {
    KernelSpec zero = spec;
    zero.lambda_i = 0.0;
    zero.lambda_da = 0.0;
    const LossReport rep = total_loss(batch_of(0, 4), zero, DataLoss::kDice, false, subset, true);
    double data = 0.0;
    for (int i = 0; i < 4; ++i) data += partial_dice(items[i].p, items[i].scribbles).value;
    CHECK(rep.total == doctest::Approx(data).epsilon(1e-12));
    CHECK(rep.total == doctest::Approx(rep.data_term).epsilon(1e-12));
  }

  SUBCASE("single source item gets no regularizer") {
    const LossReport rep = total_loss(batch_of(0, 1), spec, DataLoss::kCrossEntropy, false,
                                      subset, true);
    CHECK(rep.r_i_term == 0.0);
    CHECK(rep.r_da_term == 0.0);
    CHECK(rep.total == doctest::Approx(rep.data_term).epsilon(1e-12));
    const ValueGrad plain = partial_cross_entropy(items[0].p, items[0].scribbles);
    for (std::size_t t = 0; t < plain.grad.probs.size(); ++t) {
      CHECK(rep.gradients[0].probs[t] == doctest::Approx(plain.grad.probs[t]).epsilon(1e-12));
    }
  }

  SUBCASE("source items receive only the data gradient") {
    const LossReport rep = total_loss(batch_of(0, 4), spec, DataLoss::kDice, true, subset, true);
    for (int i = 0; i < 2; ++i) {
      const ValueGrad plain = partial_dice(items[i].p, items[i].scribbles);
      for (std::size_t t = 0; t < plain.grad.probs.size(); ++t) {
        CHECK(rep.gradients[i].probs[t] == doctest::Approx(plain.grad.probs[t]).epsilon(1e-12));
      }
    }
  }

  SUBCASE("decomposition identity") {
    const LossReport rep = total_loss(batch_of(0, 4), spec, DataLoss::kDice, true, subset, true);
    CHECK(rep.total == doctest::Approx(rep.data_term + spec.lambda_i * rep.r_i_term +
                                       spec.lambda_da * rep.r_da_term)
                           .epsilon(1e-9));
  }

  SUBCASE("inner-objective identity at y_hat = p") {
    // The alternate route: data term plus, per target item, the divergence to
    // itself (identically zero) and the regularizers at the proposal, which is
    // the network output for target items and the fixed annotation for source
    // items.
    for (const bool da : {false, true}) {
      const LossReport rep = total_loss(batch_of(0, 4), spec, DataLoss::kDice, da, subset, true);
      double alt = 0.0;
      for (int i = 0; i < 4; ++i) alt += partial_dice(items[i].p, items[i].scribbles).value;
      for (int i = 2; i < 4; ++i) {
        alt += kl_divergence(items[i].p, items[i].p);
        alt += spec.lambda_i * r_i(items[i].p, items[i].image, spec, true).value;
      }
      if (da) {
        alt += spec.lambda_da *
               r_da(items[2].p, items[3].p, items[2].g, items[3].g, spec, subset, true).value;
        for (int s = 0; s < 2; ++s) {
          LabelMap crisp(h, w, 0);
          for (int k = 0; k < h * w; ++k) crisp.labels[k] = items[s].scribbles.entries[k];
          const SoftLabeling hot = one_hot(crisp, C);
          for (int i = 2; i < 4; ++i) {
            alt += spec.lambda_da *
                   r_da(items[i].p, hot, items[i].g, items[s].g, spec, subset, true).value;
          }
        }
      }
      CHECK(rep.total == doctest::Approx(alt).epsilon(1e-9));
    }
  }

  SUBCASE("da needs two target items") {
    CHECK_THROWS_AS(total_loss(batch_of(0, 3), spec, DataLoss::kDice, true, subset, true),
                    DomainError);
  }
}
