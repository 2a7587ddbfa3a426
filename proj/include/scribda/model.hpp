#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "scribda/grid.hpp"

namespace scribda {

// One convolution layer; weights are (out, in, ky, kx) row-major.
struct ConvLayer {
  int out_channels = 0;
  int in_channels = 0;
  int ksize = 0;
  std::vector<double> w;
  std::vector<double> b;

  ConvLayer() = default;
  ConvLayer(int out_ch, int in_ch, int k);
  double wat(int o, int i, int ky, int kx) const {
    return w[((static_cast<std::size_t>(o) * in_channels + i) * ksize + ky) * ksize + kx];
  }
  double& wat(int o, int i, int ky, int kx) {
    return w[((static_cast<std::size_t>(o) * in_channels + i) * ksize + ky) * ksize + kx];
  }
};

// Small per-pixel segmenter: two reflect-padded 3x3 convolutions with ReLU
// producing the feature head g, then a 1x1 convolution and softmax for the
// class probabilities.
struct SegmenterParams {
  int in_channels = 1;
  int h1 = 16;
  int feature_channels = 8;
  int classes = 2;
  std::uint64_t seed = 0;
  // Input standardization constants, set from training data and stored with
  // the checkpoint; the identity defaults leave forward untouched.
  double input_mean = 0.0;
  double input_scale = 1.0;
  ConvLayer conv1;  // in -> h1, 3x3
  ConvLayer conv2;  // h1 -> feature_channels, 3x3
  ConvLayer head;   // feature_channels -> classes, 1x1

  std::size_t parameter_count() const;
  void for_each_tensor(const std::function<void(std::vector<double>&)>& fn);
  void for_each_tensor(const std::function<void(const std::vector<double>&)>& fn) const;
};

// Gradient holder mirroring SegmenterParams' layout.
struct SegmenterGrads {
  ConvLayer conv1, conv2, head;

  explicit SegmenterGrads(const SegmenterParams& params);
  void accumulate(const SegmenterGrads& other);
  void for_each_tensor(const std::function<void(const std::vector<double>&)>& fn) const;
};

// He fan-in scaled weights, zero biases, bit-identical per seed.
SegmenterParams init_segmenter(std::uint64_t seed, int in_channels, int h1,
                               int feature_channels, int classes);

struct ForwardResult {
  TensorGrid features;  // H x W x feature_channels, post-ReLU
  SoftLabeling probs;
};

ForwardResult forward(const SegmenterParams& params, const TensorGrid& image);

// Reverse-mode parameter gradients for the given output pullbacks. grad_features
// may be all zero when the loss treats g as a constant.
SegmenterGrads backward(const SegmenterParams& params, const TensorGrid& image,
                        const SoftLabeling& grad_probs, const TensorGrid& grad_features);

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  long step = 0;
};

// Decoupled weight decay (applied before the moment update) followed by the
// standard bias-corrected Adam step.
void adam_step(SegmenterParams& params, const SegmenterGrads& grads, AdamState& state,
               double lr, double weight_decay, double beta1 = 0.9, double beta2 = 0.999,
               double eps = 1e-8);

// Checkpoint = one .tg tensor per layer plus an index.json with the shape metadata.
void save_checkpoint(const std::string& dir, const SegmenterParams& params);
SegmenterParams load_checkpoint(const std::string& index_json_path);

}  // namespace scribda
