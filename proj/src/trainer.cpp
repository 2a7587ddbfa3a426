#include "scribda/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <future>
#include <limits>
#include <numeric>
#include <random>

#include "scribda/tensor_io.hpp"

namespace scribda {

namespace {

constexpr double kPi = 3.14159265358979323846;

struct StepSample {
  TensorGrid image;
  ScribbleMask supervision;
  bool target_domain = false;
};

// Rotation/scale about the image center plus additive white noise. Labels are
// warped with nearest neighbor; samples falling outside become unlabeled. When
// the warp would wipe out every annotation the geometric part is dropped.
StepSample augment_sample(const TensorGrid& image, const ScribbleMask& supervision,
                          bool target_domain, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> angle_dist(-15.0 * kPi / 180.0, 15.0 * kPi / 180.0);
  std::uniform_real_distribution<double> scale_dist(0.9, 1.1);
  std::normal_distribution<double> gauss(0.0, 1.0);

  const double angle = angle_dist(rng);
  const double scale = scale_dist(rng);
  const double noise_sigma = 0.02 * (image.max_value() - image.min_value());

  const int h = image.height, w = image.width;
  const double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;
  const double ca = std::cos(-angle) / scale, sa = std::sin(-angle) / scale;

  auto source_pos = [&](int y, int x) {
    const double dy = y - cy, dx = x - cx;
    return std::pair<double, double>{cy + ca * dy - sa * dx, cx + sa * dy + ca * dx};
  };

  StepSample out;
  out.target_domain = target_domain;
  out.image = TensorGrid(h, w, image.channels, 0.0);
  out.supervision = ScribbleMask(h, w);

  // Sparse annotations falling outside the frame are dropped; a full
  // annotation must stay full, so it clamps like the intensities do.
  const bool full = supervision.labeled_count() == supervision.pixels();

  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const auto [sy, sx] = source_pos(y, x);
      // Bilinear with clamping for the intensities.
      const double fy = std::clamp(sy, 0.0, static_cast<double>(h - 1));
      const double fx = std::clamp(sx, 0.0, static_cast<double>(w - 1));
      const int y0 = static_cast<int>(fy), x0 = static_cast<int>(fx);
      const int y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
      const double wy = fy - y0, wx = fx - x0;
      for (int c = 0; c < image.channels; ++c) {
        const double v = (1 - wy) * ((1 - wx) * image.at(y0, x0, c) + wx * image.at(y0, x1, c)) +
                         wy * ((1 - wx) * image.at(y1, x0, c) + wx * image.at(y1, x1, c));
        out.image.at(y, x, c) = v;
      }
      const long ny = std::lround(sy), nx = std::lround(sx);
      if (full) {
        const int cy = std::clamp(static_cast<int>(ny), 0, h - 1);
        const int cx = std::clamp(static_cast<int>(nx), 0, w - 1);
        out.supervision.at(y, x) = supervision.at(cy, cx);
      } else if (ny >= 0 && ny < h && nx >= 0 && nx < w) {
        out.supervision.at(y, x) = supervision.at(static_cast<int>(ny), static_cast<int>(nx));
      }
    }
  }

  if (out.supervision.labeled_count() == 0) {
    out.image = image;
    out.supervision = supervision;
  }
  for (double& v : out.image.data) v += noise_sigma * gauss(rng);
  return out;
}

ScribbleMask training_supervision(const LoadedSample& sample, TrainMode mode) {
  if (sample.target_domain && mode != TrainMode::kFullsupTarget) return sample.scribbles;
  return full_mask(sample.mask);
}

ScribbleMask validation_supervision(const LoadedSample& sample, TrainMode mode) {
  if (mode == TrainMode::kFullsupTarget || mode == TrainMode::kSourceOnly) {
    return full_mask(sample.mask);
  }
  return sample.scribbles;
}

// Runs fn over [0, count) and collects results in index order, so threading
// never changes the outcome.
template <typename Fn>
auto map_items(int count, int threads, Fn&& fn) {
  using Result = decltype(fn(0));
  std::vector<Result> results;
  results.reserve(count);
  if (threads <= 1 || count <= 1) {
    for (int i = 0; i < count; ++i) results.push_back(fn(i));
    return results;
  }
  std::vector<std::future<Result>> futures;
  futures.reserve(count);
  for (int i = 0; i < count; ++i) {
    futures.push_back(std::async(std::launch::async, [i, &fn] { return fn(i); }));
  }
  for (int i = 0; i < count; ++i) results.push_back(futures[i].get());
  return results;
}

double population_std(const std::vector<double>& values, double mean) {
  if (values.empty()) return 0.0;
  double acc = 0.0;
  for (double v : values) acc += (v - mean) * (v - mean);
  return std::sqrt(acc / values.size());
}

}  // namespace

std::string to_string(TrainMode mode) {
  switch (mode) {
    case TrainMode::kScrib: return "scrib";
    case TrainMode::kScribIreg: return "scrib+ireg";
    case TrainMode::kScribSource: return "scrib+source";
    case TrainMode::kScribSourceIreg: return "scrib+source+ireg";
    case TrainMode::kScribSourceIregDa: return "scrib+source+ireg+da";
    case TrainMode::kFullsupTarget: return "fullsup-target";
    case TrainMode::kSourceOnly: return "source-only";
  }
  return "?";
}

TrainMode train_mode_from_string(const std::string& name) {
  for (TrainMode m : {TrainMode::kScrib, TrainMode::kScribIreg, TrainMode::kScribSource,
                      TrainMode::kScribSourceIreg, TrainMode::kScribSourceIregDa,
                      TrainMode::kFullsupTarget, TrainMode::kSourceOnly}) {
    if (to_string(m) == name) return m;
  }
  throw ConfigError("unknown training mode: " + name);
}

bool mode_uses_target(TrainMode mode) { return mode != TrainMode::kSourceOnly; }

bool mode_uses_source(TrainMode mode) {
  return mode == TrainMode::kScribSource || mode == TrainMode::kScribSourceIreg ||
         mode == TrainMode::kScribSourceIregDa || mode == TrainMode::kSourceOnly;
}

bool mode_uses_ireg(TrainMode mode) {
  return mode == TrainMode::kScribIreg || mode == TrainMode::kScribSourceIreg ||
         mode == TrainMode::kScribSourceIregDa;
}

bool mode_uses_da(TrainMode mode) { return mode == TrainMode::kScribSourceIregDa; }

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("TrainConfig: lr must be positive");
  if (weight_decay < 0.0) throw ConfigError("TrainConfig: weight decay must be >= 0");
  if (lr_drop_factor <= 1.0) throw ConfigError("TrainConfig: lr_drop_factor must exceed 1");
  if (lr_patience_epochs < 1 || early_stop_epochs < 1) {
    throw ConfigError("TrainConfig: patience settings must be >= 1");
  }
  if (max_epochs < 1) throw ConfigError("TrainConfig: max_epochs must be >= 1");
  if (da_warmup_epochs < 0) throw ConfigError("TrainConfig: warm-up must be >= 0");
  if (h1 < 1 || feature_channels < 1) throw ConfigError("TrainConfig: model dims must be >= 1");
  if (threads < 1) throw ConfigError("TrainConfig: threads must be >= 1");
  if (mode_uses_target(mode) && batch_target < 1) {
    throw ConfigError("TrainConfig: mode needs batch_target >= 1");
  }
  if (mode_uses_source(mode) && batch_source < 1) {
    throw ConfigError("TrainConfig: mode needs batch_source >= 1");
  }
  if (mode_uses_da(mode) && batch_target < 2) {
    throw ConfigError("TrainConfig: the DA mode needs batch_target >= 2");
  }
  kernel.validate();
}

std::vector<LoadedSample> load_split(const DatasetManifest& manifest,
                                     const std::string& manifest_dir, const std::string& split) {
  namespace fs = std::filesystem;
  const std::vector<ManifestEntry>* entries = nullptr;
  if (split == "train_source") entries = &manifest.train_source;
  else if (split == "train_target") entries = &manifest.train_target;
  else if (split == "val") entries = &manifest.val;
  else if (split == "test_target") entries = &manifest.test_target;
  else throw ConfigError("unknown split: " + split);

  const fs::path base = fs::path(manifest_dir) / manifest.root;
  std::vector<LoadedSample> out;
  out.reserve(entries->size());
  for (const ManifestEntry& e : *entries) {
    LoadedSample s;
    s.id = e.id;
    s.image = load_grid((base / e.image).string());
    s.mask = load_labels((base / e.mask).string());
    s.scribbles = load_scribbles((base / e.scribbles).string());
    s.target_domain = e.domain == "target";
    out.push_back(std::move(s));
  }
  return out;
}

TrainResult train(const std::vector<LoadedSample>& source_set,
                  const std::vector<LoadedSample>& target_set,
                  const std::vector<LoadedSample>& val_set, const TrainConfig& config) {
  config.validate();
  const bool uses_target = mode_uses_target(config.mode);
  const bool uses_source = mode_uses_source(config.mode);
  const bool uses_da = mode_uses_da(config.mode);
  if (uses_target && target_set.empty()) throw ConfigError("train: target set is empty");
  if (uses_source && source_set.empty()) throw ConfigError("train: source set is empty");
  if (val_set.empty()) throw ConfigError("train: validation set is empty");
  if (uses_da && target_set.size() < 2) {
    throw ConfigError("train: the DA mode needs at least 2 target images");
  }

  const std::vector<LoadedSample>& driving = uses_target ? target_set : source_set;
  const int batch_driving = uses_target ? config.batch_target : config.batch_source;
  const int steps_per_epoch =
      (static_cast<int>(driving.size()) + batch_driving - 1) / batch_driving;

  KernelSpec kernel = config.kernel;
  if (!mode_uses_ireg(config.mode)) kernel.lambda_i = 0.0;
  if (!uses_da) kernel.lambda_da = 0.0;

  const int C = 2;
  const int in_channels = driving.front().image.channels;
  SegmenterParams params =
      init_segmenter(config.seed, in_channels, config.h1, config.feature_channels, C);
  {
    // Standardize the network input over the training images; the constants
    // travel with the checkpoint.
    double sum = 0.0, sum2 = 0.0;
    std::size_t n = 0;
    for (const std::vector<LoadedSample>* set : {&source_set, &target_set}) {
      if ((set == &source_set && !uses_source) || (set == &target_set && !uses_target)) continue;
      for (const LoadedSample& s : *set) {
        for (double v : s.image.data) {
          sum += v;
          sum2 += v * v;
        }
        n += s.image.data.size();
      }
    }
    const double mean = sum / static_cast<double>(n);
    const double var = std::max(0.0, sum2 / static_cast<double>(n) - mean * mean);
    params.input_mean = mean;
    params.input_scale = 1.0 / std::max(std::sqrt(var), 1e-12);
  }
  AdamState adam;
  std::mt19937_64 rng(config.seed * 0x2545f4914f6cdd1dull + 1);

  // Pre-resolved supervision (copies once, not per epoch).
  std::vector<ScribbleMask> target_sup, source_sup, val_sup;
  for (const auto& s : target_set) target_sup.push_back(training_supervision(s, config.mode));
  for (const auto& s : source_set) source_sup.push_back(training_supervision(s, config.mode));
  for (const auto& s : val_set) val_sup.push_back(validation_supervision(s, config.mode));

  double lr = config.lr;
  TrainHistory history;
  std::vector<double> val_history;
  double best_ma = std::numeric_limits<double>::infinity();
  int best_epoch = -1;
  int last_drop_epoch = -1;

  std::vector<int> order(driving.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    const auto epoch_start = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), rng);

    double sum_total = 0.0, sum_data = 0.0, sum_ri = 0.0, sum_rda = 0.0;

    for (int step = 0; step < steps_per_epoch; ++step) {
      // Assemble the step: a slice of the driving set plus random source draws.
      std::vector<StepSample> items;
      const int begin = step * batch_driving;
      const int end = std::min<int>(begin + batch_driving, static_cast<int>(driving.size()));
      for (int t = begin; t < end; ++t) {
        const int idx = order[t];
        const LoadedSample& s = driving[idx];
        const ScribbleMask& sup = uses_target ? target_sup[idx] : source_sup[idx];
        if (config.augment) {
          items.push_back(augment_sample(s.image, sup, s.target_domain, rng));
        } else {
          items.push_back(StepSample{s.image, sup, s.target_domain});
        }
      }
      if (uses_target && uses_source) {
        std::uniform_int_distribution<int> pick(0, static_cast<int>(source_set.size()) - 1);
        for (int t = 0; t < config.batch_source; ++t) {
          const int idx = pick(rng);
          const LoadedSample& s = source_set[idx];
          if (config.augment) {
            items.push_back(augment_sample(s.image, source_sup[idx], false, rng));
          } else {
            items.push_back(StepSample{s.image, source_sup[idx], false});
          }
        }
      }

      int targets_in_step = 0;
      for (const auto& it : items) targets_in_step += it.target_domain;
      const bool da_now = uses_da && epoch >= config.da_warmup_epochs && targets_in_step >= 2;

      std::vector<int> channel_subset;
      if (da_now) {
        // Random distinct feature channels, redrawn every step.
        std::vector<int> all(config.feature_channels);
        std::iota(all.begin(), all.end(), 0);
        std::shuffle(all.begin(), all.end(), rng);
        const int take = std::min(kernel.da_channels, config.feature_channels);
        channel_subset.assign(all.begin(), all.begin() + take);
        std::sort(channel_subset.begin(), channel_subset.end());
      }

      const auto forwards = map_items(static_cast<int>(items.size()), config.threads,
                                      [&](int i) { return forward(params, items[i].image); });

      std::vector<BatchItem> batch(items.size());
      for (std::size_t i = 0; i < items.size(); ++i) {
        batch[i].p = &forwards[i].probs;
        batch[i].scribbles = &items[i].supervision;
        batch[i].image = &items[i].image;
        batch[i].features = &forwards[i].features;
        batch[i].target_domain = items[i].target_domain;
      }
      const LossReport report =
          total_loss(batch, kernel, config.data_loss, da_now, channel_subset, false);

      const TensorGrid zero_g(items.front().image.height, items.front().image.width,
                              config.feature_channels, 0.0);
      const auto item_grads =
          map_items(static_cast<int>(items.size()), config.threads, [&](int i) {
            return backward(params, items[i].image, report.gradients[i], zero_g);
          });
      SegmenterGrads grads(params);
      for (const auto& g : item_grads) grads.accumulate(g);

      adam_step(params, grads, adam, lr, config.weight_decay);

      sum_total += report.total;
      sum_data += report.data_term;
      sum_ri += report.r_i_term;
      sum_rda += report.r_da_term;
    }

    // Validation data term, no augmentation.
    double val_loss = 0.0;
    {
      const auto losses = map_items(static_cast<int>(val_set.size()), config.threads, [&](int i) {
        const ForwardResult f = forward(params, val_set[i].image);
        const ValueGrad vg = (config.data_loss == DataLoss::kDice)
                                 ? partial_dice(f.probs, val_sup[i])
                                 : partial_cross_entropy(f.probs, val_sup[i]);
        return vg.value;
      });
      val_loss = std::accumulate(losses.begin(), losses.end(), 0.0) /
                 static_cast<double>(losses.size());
    }
    val_history.push_back(val_loss);

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_total = sum_total / steps_per_epoch;
    rec.train_data = sum_data / steps_per_epoch;
    rec.train_ri = sum_ri / steps_per_epoch;
    rec.train_rda = sum_rda / steps_per_epoch;
    rec.val_data = val_loss;
    rec.lr = lr;
    rec.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - epoch_start).count();
    history.epochs.push_back(rec);

    const int window = std::min<int>(3, static_cast<int>(val_history.size()));
    const double ma =
        std::accumulate(val_history.end() - window, val_history.end(), 0.0) / window;
    if (ma < best_ma - 1e-12) {
      best_ma = ma;
      best_epoch = epoch;
    } else {
      if (epoch - best_epoch >= config.early_stop_epochs) break;
      if (epoch - std::max(best_epoch, last_drop_epoch) >= config.lr_patience_epochs) {
        lr /= config.lr_drop_factor;
        last_drop_epoch = epoch;
      }
    }
  }

  return TrainResult{std::move(params), std::move(history)};
}

EvalReport evaluate(const SegmenterParams& params, const std::vector<LoadedSample>& dataset,
                    Spacing spacing) {
  EvalReport report;
  std::map<std::string, std::vector<double>> dices, assds;
  std::map<std::string, int> undefined;

  for (const LoadedSample& s : dataset) {
    const ForwardResult f = forward(params, s.image);
    const LabelMap pred = argmax_labeling(f.probs);
    EvalRow row;
    row.id = s.id;
    row.domain = s.target_domain ? "target" : "source";
    row.dice = dice_percent(pred, s.mask);
    row.assd = assd_mm(pred, s.mask, spacing);
    dices[row.domain].push_back(row.dice);
    if (row.assd) {
      assds[row.domain].push_back(*row.assd);
    } else {
      ++undefined[row.domain];
    }
    report.rows.push_back(std::move(row));
  }

  for (const auto& [domain, values] : dices) {
    EvalSummary s;
    s.count = static_cast<int>(values.size());
    s.dice_mean = std::accumulate(values.begin(), values.end(), 0.0) / values.size();
    s.dice_std = population_std(values, s.dice_mean);
    const auto& a = assds[domain];
    if (!a.empty()) {
      s.assd_mean = std::accumulate(a.begin(), a.end(), 0.0) / a.size();
      s.assd_std = population_std(a, s.assd_mean);
    }
    s.assd_undefined = undefined[domain];
    report.per_domain[domain] = s;
  }
  return report;
}

}  // namespace scribda
