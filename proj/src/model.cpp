#include "scribda/model.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include <json.hpp>

#include "scribda/tensor_io.hpp"

namespace scribda {

namespace {

int reflect_index(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * n - 2 - i;
  }
  return i;
}

TensorGrid conv_forward(const TensorGrid& in, const ConvLayer& layer) {
  const int h = in.height, w = in.width;
  const int r = layer.ksize / 2;
  TensorGrid out(h, w, layer.out_channels, 0.0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int o = 0; o < layer.out_channels; ++o) {
        double acc = layer.b[o];
        for (int ky = 0; ky < layer.ksize; ++ky) {
          const int yy = reflect_index(y + ky - r, h);
          for (int kx = 0; kx < layer.ksize; ++kx) {
            const int xx = reflect_index(x + kx - r, w);
            const double* px = &in.data[in.index(yy, xx, 0)];
            for (int i = 0; i < layer.in_channels; ++i) {
              acc += layer.wat(o, i, ky, kx) * px[i];
            }
          }
        }
        out.at(y, x, o) = acc;
      }
    }
  }
  return out;
}

// Accumulates weight/bias gradients and, when grad_in is non-null, the input pullback.
void conv_backward(const TensorGrid& in, const ConvLayer& layer, const TensorGrid& grad_out,
                   ConvLayer& grad_layer, TensorGrid* grad_in) {
  const int h = in.height, w = in.width;
  const int r = layer.ksize / 2;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int o = 0; o < layer.out_channels; ++o) {
        const double go = grad_out.at(y, x, o);
        if (go == 0.0) continue;
        grad_layer.b[o] += go;
        for (int ky = 0; ky < layer.ksize; ++ky) {
          const int yy = reflect_index(y + ky - r, h);
          for (int kx = 0; kx < layer.ksize; ++kx) {
            const int xx = reflect_index(x + kx - r, w);
            const double* px = &in.data[in.index(yy, xx, 0)];
            double* gpx = grad_in ? &grad_in->data[grad_in->index(yy, xx, 0)] : nullptr;
            for (int i = 0; i < layer.in_channels; ++i) {
              grad_layer.wat(o, i, ky, kx) += go * px[i];
              if (gpx) gpx[i] += go * layer.wat(o, i, ky, kx);
            }
          }
        }
      }
    }
  }
}

void relu_forward(TensorGrid& t) {
  for (double& v : t.data) v = std::max(v, 0.0);
}

// Masks the pullback by the pre-activation sign.
void relu_backward(const TensorGrid& pre, TensorGrid& grad) {
  for (std::size_t t = 0; t < grad.data.size(); ++t) {
    if (pre.data[t] <= 0.0) grad.data[t] = 0.0;
  }
}

struct ForwardTrace {
  TensorGrid input;  // post-standardization
  TensorGrid pre1, act1, pre2, act2, logits;
  SoftLabeling probs;
};

ForwardTrace run_forward(const SegmenterParams& p, const TensorGrid& image) {
  if (image.channels != p.in_channels) {
    throw DomainError("forward: image channel count does not match the segmenter");
  }
  ForwardTrace t;
  t.input = image;
  if (p.input_mean != 0.0 || p.input_scale != 1.0) {
    for (double& v : t.input.data) v = (v - p.input_mean) * p.input_scale;
  }
  t.pre1 = conv_forward(t.input, p.conv1);
  t.act1 = t.pre1;
  relu_forward(t.act1);
  t.pre2 = conv_forward(t.act1, p.conv2);
  t.act2 = t.pre2;
  relu_forward(t.act2);
  t.logits = conv_forward(t.act2, p.head);

  const int n = image.pixels();
  const int C = p.classes;
  t.probs = SoftLabeling(image.height, image.width, C, 0.0);
  for (int k = 0; k < n; ++k) {
    const double* row = &t.logits.data[static_cast<std::size_t>(k) * C];
    double mx = row[0];
    for (int c = 1; c < C; ++c) mx = std::max(mx, row[c]);
    double sum = 0.0;
    for (int c = 0; c < C; ++c) {
      const double e = std::exp(row[c] - mx);
      t.probs.probs[static_cast<std::size_t>(k) * C + c] = e;
      sum += e;
    }
    for (int c = 0; c < C; ++c) t.probs.probs[static_cast<std::size_t>(k) * C + c] /= sum;
  }
  return t;
}

}  // namespace

ConvLayer::ConvLayer(int out_ch, int in_ch, int k)
    : out_channels(out_ch),
      in_channels(in_ch),
      ksize(k),
      w(static_cast<std::size_t>(out_ch) * in_ch * k * k, 0.0),
      b(out_ch, 0.0) {}

std::size_t SegmenterParams::parameter_count() const {
  return conv1.w.size() + conv1.b.size() + conv2.w.size() + conv2.b.size() + head.w.size() +
         head.b.size();
}

void SegmenterParams::for_each_tensor(const std::function<void(std::vector<double>&)>& fn) {
  fn(conv1.w);
  fn(conv1.b);
  fn(conv2.w);
  fn(conv2.b);
  fn(head.w);
  fn(head.b);
}

void SegmenterParams::for_each_tensor(
    const std::function<void(const std::vector<double>&)>& fn) const {
  fn(conv1.w);
  fn(conv1.b);
  fn(conv2.w);
  fn(conv2.b);
  fn(head.w);
  fn(head.b);
}

SegmenterGrads::SegmenterGrads(const SegmenterParams& params)
    : conv1(params.conv1.out_channels, params.conv1.in_channels, params.conv1.ksize),
      conv2(params.conv2.out_channels, params.conv2.in_channels, params.conv2.ksize),
      head(params.head.out_channels, params.head.in_channels, params.head.ksize) {}

void SegmenterGrads::accumulate(const SegmenterGrads& other) {
  auto add = [](std::vector<double>& dst, const std::vector<double>& src) {
    for (std::size_t t = 0; t < dst.size(); ++t) dst[t] += src[t];
  };
  add(conv1.w, other.conv1.w);
  add(conv1.b, other.conv1.b);
  add(conv2.w, other.conv2.w);
  add(conv2.b, other.conv2.b);
  add(head.w, other.head.w);
  add(head.b, other.head.b);
}

void SegmenterGrads::for_each_tensor(
    const std::function<void(const std::vector<double>&)>& fn) const {
  fn(conv1.w);
  fn(conv1.b);
  fn(conv2.w);
  fn(conv2.b);
  fn(head.w);
  fn(head.b);
}

SegmenterParams init_segmenter(std::uint64_t seed, int in_channels, int h1,
                               int feature_channels, int classes) {
  if (in_channels < 1 || h1 < 1 || feature_channels < 1 || classes < 1) {
    throw DomainError("init_segmenter: dimensions must be positive");
  }
  SegmenterParams p;
  p.in_channels = in_channels;
  p.h1 = h1;
  p.feature_channels = feature_channels;
  p.classes = classes;
  p.seed = seed;
  p.conv1 = ConvLayer(h1, in_channels, 3);
  p.conv2 = ConvLayer(feature_channels, h1, 3);
  p.head = ConvLayer(classes, feature_channels, 1);

  std::mt19937_64 rng(seed);
  auto he_fill = [&rng](ConvLayer& layer) {
    const double fan_in = static_cast<double>(layer.in_channels) * layer.ksize * layer.ksize;
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
    for (double& v : layer.w) v = dist(rng);
  };
  he_fill(p.conv1);
  he_fill(p.conv2);
  he_fill(p.head);
  return p;
}

ForwardResult forward(const SegmenterParams& params, const TensorGrid& image) {
  ForwardTrace t = run_forward(params, image);
  return ForwardResult{std::move(t.act2), std::move(t.probs)};
}

SegmenterGrads backward(const SegmenterParams& params, const TensorGrid& image,
                        const SoftLabeling& grad_probs, const TensorGrid& grad_features) {
  if (grad_probs.height != image.height || grad_probs.width != image.width ||
      grad_probs.classes != params.classes) {
    throw DomainError("backward: grad_probs shape mismatch");
  }
  if (grad_features.height != image.height || grad_features.width != image.width ||
      grad_features.channels != params.feature_channels) {
    throw DomainError("backward: grad_features shape mismatch");
  }

  const ForwardTrace t = run_forward(params, image);
  const int n = image.pixels();
  const int C = params.classes;

  // Softmax pullback: dL/dz_c = p_c (dL/dp_c - sum_c' dL/dp_c' p_c').
  TensorGrid grad_logits(image.height, image.width, C, 0.0);
  for (int k = 0; k < n; ++k) {
    const double* pk = &t.probs.probs[static_cast<std::size_t>(k) * C];
    const double* gk = &grad_probs.probs[static_cast<std::size_t>(k) * C];
    double dot = 0.0;
    for (int c = 0; c < C; ++c) dot += gk[c] * pk[c];
    for (int c = 0; c < C; ++c) {
      grad_logits.data[static_cast<std::size_t>(k) * C + c] = pk[c] * (gk[c] - dot);
    }
  }

  SegmenterGrads grads(params);

  TensorGrid grad_act2 = grad_features;  // external pullback into g
  conv_backward(t.act2, params.head, grad_logits, grads.head, &grad_act2);
  relu_backward(t.pre2, grad_act2);

  TensorGrid grad_act1(image.height, image.width, params.h1, 0.0);
  conv_backward(t.act1, params.conv2, grad_act2, grads.conv2, &grad_act1);
  relu_backward(t.pre1, grad_act1);

  conv_backward(t.input, params.conv1, grad_act1, grads.conv1, nullptr);
  return grads;
}

void adam_step(SegmenterParams& params, const SegmenterGrads& grads, AdamState& state,
               double lr, double weight_decay, double beta1, double beta2, double eps) {
  const std::size_t total = params.parameter_count();
  if (state.m.empty()) {
    state.m.assign(total, 0.0);
    state.v.assign(total, 0.0);
    state.step = 0;
  }
  if (state.m.size() != total || state.v.size() != total) {
    throw DomainError("adam_step: state size does not match parameter count");
  }

  std::vector<const std::vector<double>*> gtensors;
  grads.for_each_tensor([&](const std::vector<double>& t) { gtensors.push_back(&t); });

  ++state.step;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));

  std::size_t offset = 0;
  std::size_t tensor_idx = 0;
  params.for_each_tensor([&](std::vector<double>& theta) {
    const std::vector<double>& g = *gtensors[tensor_idx++];
    if (g.size() != theta.size()) throw DomainError("adam_step: gradient shape mismatch");
    for (std::size_t i = 0; i < theta.size(); ++i) {
      theta[i] *= (1.0 - lr * weight_decay);
      const std::size_t s = offset + i;
      state.m[s] = beta1 * state.m[s] + (1.0 - beta1) * g[i];
      state.v[s] = beta2 * state.v[s] + (1.0 - beta2) * g[i] * g[i];
      const double mhat = state.m[s] / bc1;
      const double vhat = state.v[s] / bc2;
      theta[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
    offset += theta.size();
  });
}

void save_checkpoint(const std::string& dir, const SegmenterParams& params) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  auto tensor_path = [&](const std::string& name) { return (fs::path(dir) / (name + ".tg")).string(); };

  auto write_layer = [&](const std::string& name, const ConvLayer& layer) {
    TgTensor w;
    w.dtype = TgDtype::kFloat64;
    w.dims = {static_cast<std::uint64_t>(layer.out_channels),
              static_cast<std::uint64_t>(layer.in_channels),
              static_cast<std::uint64_t>(layer.ksize), static_cast<std::uint64_t>(layer.ksize)};
    w.f64 = layer.w;
    write_tg(tensor_path(name + "_w"), w);
    TgTensor b;
    b.dtype = TgDtype::kFloat64;
    b.dims = {static_cast<std::uint64_t>(layer.out_channels)};
    b.f64 = layer.b;
    write_tg(tensor_path(name + "_b"), b);
  };
  write_layer("conv1", params.conv1);
  write_layer("conv2", params.conv2);
  write_layer("head", params.head);

  nlohmann::json index;
  index["in_channels"] = params.in_channels;
  index["h1"] = params.h1;
  index["feature_channels"] = params.feature_channels;
  index["classes"] = params.classes;
  index["seed"] = params.seed;
  index["input_mean"] = params.input_mean;
  index["input_scale"] = params.input_scale;
  index["layers"] = {
      {"conv1_w", "conv1_w.tg"}, {"conv1_b", "conv1_b.tg"}, {"conv2_w", "conv2_w.tg"},
      {"conv2_b", "conv2_b.tg"}, {"head_w", "head_w.tg"},   {"head_b", "head_b.tg"},
  };
  std::ofstream os(fs::path(dir) / "index.json");
  if (!os) throw IoError("cannot write checkpoint index in " + dir);
  os << index.dump(2) << "\n";
}

SegmenterParams load_checkpoint(const std::string& index_json_path) {
  namespace fs = std::filesystem;
  fs::path index_path(index_json_path);
  if (fs::is_directory(index_path)) index_path /= "index.json";
  std::ifstream is(index_path);
  if (!is) throw IoError("cannot open checkpoint index " + index_path.string());
  nlohmann::json index = nlohmann::json::parse(is);

  SegmenterParams p = init_segmenter(index.value("seed", std::uint64_t{0}),
                                     index.at("in_channels").get<int>(), index.at("h1").get<int>(),
                                     index.at("feature_channels").get<int>(),
                                     index.at("classes").get<int>());
  p.input_mean = index.value("input_mean", 0.0);
  p.input_scale = index.value("input_scale", 1.0);
  const fs::path dir = index_path.parent_path();
  auto read_layer = [&](const std::string& name, ConvLayer& layer) {
    TgTensor w = read_tg((dir / index.at("layers").at(name + "_w").get<std::string>()).string());
    if (w.f64.size() != layer.w.size()) throw IoError("checkpoint tensor size mismatch: " + name);
    layer.w = std::move(w.f64);
    TgTensor b = read_tg((dir / index.at("layers").at(name + "_b").get<std::string>()).string());
    if (b.f64.size() != layer.b.size()) throw IoError("checkpoint bias size mismatch: " + name);
    layer.b = std::move(b.f64);
  };
  read_layer("conv1", p.conv1);
  read_layer("conv2", p.conv2);
  read_layer("head", p.head);
  return p;
}

}  // namespace scribda
