#include "scribda/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "scribda/tensor_io.hpp"

namespace scribda {

namespace {

namespace fs = std::filesystem;

std::vector<double> gaussian_taps(double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> taps(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    taps[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += taps[i + radius];
  }
  for (double& t : taps) t /= sum;
  return taps;
}

int reflect(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * n - 2 - i;
  }
  return i;
}

void separable_blur(std::vector<double>& field, int h, int w, double sigma) {
  const std::vector<double> taps = gaussian_taps(sigma);
  const int radius = static_cast<int>(taps.size()) / 2;
  std::vector<double> tmp(field.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int t = -radius; t <= radius; ++t) {
        acc += taps[t + radius] * field[static_cast<std::size_t>(y) * w + reflect(x + t, w)];
      }
      tmp[static_cast<std::size_t>(y) * w + x] = acc;
    }
  }
  for (int x = 0; x < w; ++x) {
    for (int y = 0; y < h; ++y) {
      double acc = 0.0;
      for (int t = -radius; t <= radius; ++t) {
        acc += taps[t + radius] * tmp[static_cast<std::size_t>(reflect(y + t, h)) * w + x];
      }
      field[static_cast<std::size_t>(y) * w + x] = acc;
    }
  }
}

// Smoothed standardized white noise.
std::vector<double> smooth_noise(std::mt19937_64& rng, int h, int w, double sigma) {
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<double> field(static_cast<std::size_t>(h) * w);
  for (double& v : field) v = dist(rng);
  separable_blur(field, h, w, sigma);
  double mean = std::accumulate(field.begin(), field.end(), 0.0) / field.size();
  double var = 0.0;
  for (double v : field) var += (v - mean) * (v - mean);
  var /= field.size();
  const double sd = std::max(std::sqrt(var), 1e-12);
  for (double& v : field) v = (v - mean) / sd;
  return field;
}

LabelMap random_blob_mask(std::mt19937_64& rng, int size) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  // Retry until the lesion area lands in a range that keeps the annotation
  // budgets meaningful.
  for (int attempt = 0; attempt < 64; ++attempt) {
    LabelMap mask(size, size, 0);
    const std::vector<double> wobble = smooth_noise(rng, size, size, size / 10.0);
    const int nblobs = (unit(rng) < 0.35) ? 2 : 1;
    for (int b = 0; b < nblobs; ++b) {
      const double cy = (0.28 + 0.44 * unit(rng)) * size;
      const double cx = (0.28 + 0.44 * unit(rng)) * size;
      const double radius = (0.10 + 0.08 * unit(rng)) * size;
      for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
          const double dy = y - cy, dx = x - cx;
          const double d = std::sqrt(dy * dy + dx * dx);
          const double s = radius - d + 0.35 * radius * wobble[static_cast<std::size_t>(y) * size + x];
          if (s > 0.0) mask.at(y, x) = 1;
        }
      }
    }
    const int fg = static_cast<int>(std::count(mask.labels.begin(), mask.labels.end(), 1));
    const double frac = static_cast<double>(fg) / mask.pixels();
    if (frac >= 0.03 && frac <= 0.22) return mask;
  }
  // Overly pathological draw; fall back to a plain disc.
  LabelMap mask(size, size, 0);
  const double c = size / 2.0, r = 0.15 * size;
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      if ((y - c) * (y - c) + (x - c) * (x - c) < r * r) mask.at(y, x) = 1;
    }
  }
  return mask;
}

std::vector<std::pair<int, int>> neighbors4(int y, int x) {
  return {{y - 1, x}, {y + 1, x}, {y, x - 1}, {y, x + 1}};
}

std::vector<char> erode(const LabelMap& mask) {
  std::vector<char> out(mask.labels.size(), 0);
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) {
      if (mask.at(y, x) != 1) continue;
      bool keep = true;
      for (auto [ny, nx] : neighbors4(y, x)) {
        if (ny < 0 || ny >= mask.height || nx < 0 || nx >= mask.width || mask.at(ny, nx) != 1) {
          keep = false;
          break;
        }
      }
      out[static_cast<std::size_t>(y) * mask.width + x] = keep;
    }
  }
  return out;
}

std::vector<char> dilate(const LabelMap& mask, int radius) {
  std::vector<char> out(mask.labels.size(), 0);
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) {
      if (mask.at(y, x) != 1) continue;
      for (int dy = -radius; dy <= radius; ++dy) {
        for (int dx = -radius; dx <= radius; ++dx) {
          const int ny = y + dy, nx = x + dx;
          if (ny >= 0 && ny < mask.height && nx >= 0 && nx < mask.width) {
            out[static_cast<std::size_t>(ny) * mask.width + nx] = 1;
          }
        }
      }
    }
  }
  return out;
}

// Random walk through `allowed`, labeling visited pixels until `budget` pixels
// are marked or the walk runs out of moves.
void scribble_walk(ScribbleMask& scrib, const std::vector<char>& allowed, int label, int budget,
                   std::mt19937_64& rng) {
  const int h = scrib.height, w = scrib.width;
  std::vector<int> candidates;
  for (int k = 0; k < h * w; ++k) {
    if (allowed[k] && scrib.entries[k] == ScribbleMask::kUnlabeled) candidates.push_back(k);
  }
  if (candidates.empty() || budget <= 0) return;

  std::uniform_int_distribution<int> pick(0, static_cast<int>(candidates.size()) - 1);
  int pos = candidates[pick(rng)];
  int marked = 0;
  int stall = 0;
  const int max_stall = 4 * budget + 64;
  while (marked < budget && stall < max_stall) {
    if (scrib.entries[pos] == ScribbleMask::kUnlabeled) {
      scrib.entries[pos] = label;
      ++marked;
    }
    const int y = pos / w, x = pos % w;
    auto moves = neighbors4(y, x);
    std::shuffle(moves.begin(), moves.end(), rng);
    bool moved = false;
    for (auto [ny, nx] : moves) {
      if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
      const int np = ny * w + nx;
      if (!allowed[np]) continue;
      // Prefer fresh ground, but allow retracing to escape pockets.
      if (scrib.entries[np] == ScribbleMask::kUnlabeled || stall % 3 == 2) {
        pos = np;
        moved = true;
        break;
      }
    }
    if (!moved) {
      pos = candidates[pick(rng)];
    }
    ++stall;
  }
}

void write_sample(const fs::path& dir, const ManifestEntry& entry, const SynthSample& sample,
                  const ScribbleMask& scribbles) {
  save_grid((dir / entry.image).string(), sample.image);
  save_labels((dir / entry.mask).string(), sample.mask);
  save_scribbles((dir / entry.scribbles).string(), scribbles);
}

nlohmann::json entry_to_json(const ManifestEntry& e) {
  return {{"id", e.id},   {"image", e.image},       {"mask", e.mask},
          {"scribbles", e.scribbles}, {"domain", e.domain}};
}

ManifestEntry entry_from_json(const nlohmann::json& j) {
  ManifestEntry e;
  e.id = j.at("id").get<std::string>();
  e.image = j.at("image").get<std::string>();
  e.mask = j.at("mask").get<std::string>();
  e.scribbles = j.at("scribbles").get<std::string>();
  e.domain = j.at("domain").get<std::string>();
  return e;
}

}  // namespace

SynthSample make_sample(std::mt19937_64& rng, int size, bool target_domain) {
  if (size < 32) throw DomainError("make_sample: size must be >= 32");
  SynthSample out;
  out.mask = random_blob_mask(rng, size);

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  // Soft lesion boundary for a partial-volume look.
  std::vector<double> soft(out.mask.labels.begin(), out.mask.labels.end());
  separable_blur(soft, size, size, 2.4);

  const double fg_level = target_domain ? 0.25 : 0.78;
  const double bg_level = target_domain ? 0.78 : 0.25;

  const std::vector<double> blotch = smooth_noise(rng, size, size, 5.0);
  out.image = TensorGrid(size, size, 1, 0.0);

  if (!target_domain) {
    // Source: bright smooth lesion on a dark background whose grain keeps it
    // from ever looking locally flat.
    for (int k = 0; k < size * size; ++k) {
      double v = bg_level + (fg_level - bg_level) * soft[k];
      v += 0.05 * blotch[k];
      v += (0.07 - 0.05 * soft[k]) * gauss(rng);  // grain lives in the background
      out.image.data[k] = std::clamp(v, 0.0, 1.0);
    }
  } else {
    // Target: inverted contrast; the bright background carries stripes and
    // speckle while the dark lesion stays smooth.
    const double angle = unit(rng) * 3.14159265358979;
    const double wavelength = 3.5 + 3.0 * unit(rng);
    const double phase = unit(rng) * 6.2831853;
    std::vector<double> speckle = smooth_noise(rng, size, size, 1.1);
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        const int k = y * size + x;
        double v = bg_level + (fg_level - bg_level) * soft[k];
        const double carrier = std::sin(
            2.0 * 3.14159265358979 * (std::cos(angle) * x + std::sin(angle) * y) / wavelength +
            phase);
        const double bg_weight = 1.0 - soft[k];
        v += 0.10 * carrier * bg_weight;
        v += 0.04 * blotch[k];
        v += 0.07 * speckle[k] * bg_weight;
        v += 0.03 * gauss(rng);
        out.image.data[k] = std::clamp(v, 0.0, 1.0);
      }
    }
  }
  return out;
}

ScribbleMask make_scribbles(const LabelMap& mask, std::uint64_t seed, double fg_budget,
                            double image_budget) {
  for (int v : mask.labels) {
    if (v != 0 && v != 1) throw DomainError("make_scribbles: mask must be binary");
  }
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);
  ScribbleMask scrib(mask.height, mask.width);
  const int n = mask.pixels();
  const int n_fg = static_cast<int>(std::count(mask.labels.begin(), mask.labels.end(), 1));
  if (n_fg == 0) throw DomainError("make_scribbles: mask has no foreground");

  const std::vector<char> eroded = erode(mask);
  const bool erodable = std::any_of(eroded.begin(), eroded.end(), [](char c) { return c != 0; });
  if (erodable) {
    const int fg_target = std::max(1, static_cast<int>(std::lround(fg_budget * n_fg)));
    scribble_walk(scrib, eroded, 1, fg_target, rng);
  } else {
    // Too thin to erode: single pixel nearest the centroid.
    double cy = 0.0, cx = 0.0;
    for (int y = 0; y < mask.height; ++y) {
      for (int x = 0; x < mask.width; ++x) {
        if (mask.at(y, x) == 1) {
          cy += y;
          cx += x;
        }
      }
    }
    cy /= n_fg;
    cx /= n_fg;
    int best = -1;
    double best_d = 0.0;
    for (int y = 0; y < mask.height; ++y) {
      for (int x = 0; x < mask.width; ++x) {
        if (mask.at(y, x) != 1) continue;
        const double d = (y - cy) * (y - cy) + (x - cx) * (x - cx);
        if (best < 0 || d < best_d) {
          best = y * mask.width + x;
          best_d = d;
        }
      }
    }
    scrib.entries[best] = 1;
  }

  const int fg_labeled = scrib.labeled_count();
  const std::vector<char> exclusion = dilate(mask, 2);
  std::vector<char> bg_allowed(exclusion.size());
  for (std::size_t k = 0; k < exclusion.size(); ++k) bg_allowed[k] = !exclusion[k];

  const int total_target = std::max(fg_labeled + 1, static_cast<int>(std::lround(image_budget * n)));
  int bg_budget = total_target - fg_labeled;
  // A handful of separate strokes reads more like hand annotation than one
  // long crawl.
  std::uniform_int_distribution<int> stroke_len(8, 20);
  while (bg_budget > 0) {
    const int len = std::min(bg_budget, stroke_len(rng));
    const int before = scrib.labeled_count();
    scribble_walk(scrib, bg_allowed, 0, len, rng);
    const int gained = scrib.labeled_count() - before;
    if (gained == 0) break;  // nowhere left to draw
    bg_budget -= gained;
  }
  return scrib;
}

DatasetManifest generate(std::uint64_t seed, int n_source, int n_target_train, int n_val,
                         int n_test, int size, const std::string& out_dir) {
  if (n_source < 1 || n_target_train < 1 || n_val < 1 || n_test < 1) {
    throw DomainError("generate: all split counts must be >= 1");
  }
  if (size < 32) throw DomainError("generate: size must be >= 32");

  fs::create_directories(out_dir);
  DatasetManifest m;
  m.root = ".";
  m.seed = seed;
  m.size = size;
  m.n_source = n_source;
  m.n_target_train = n_target_train;
  m.n_val = n_val;
  m.n_test = n_test;

  auto make_split = [&](const std::string& prefix, int count, bool target_domain,
                        int split_tag) {
    std::vector<ManifestEntry> entries;
    for (int i = 0; i < count; ++i) {
      std::seed_seq seq{static_cast<std::uint64_t>(seed), static_cast<std::uint64_t>(split_tag),
                        static_cast<std::uint64_t>(i)};
      std::mt19937_64 rng(seq);
      const SynthSample sample = make_sample(rng, size, target_domain);

      char idbuf[32];
      std::snprintf(idbuf, sizeof(idbuf), "%s_%03d", prefix.c_str(), i);
      ManifestEntry e;
      e.id = idbuf;
      e.image = e.id + "_img.tg";
      e.mask = e.id + "_mask.tg";
      e.scribbles = e.id + "_scrib.tg";
      e.domain = target_domain ? "target" : "source";

      ScribbleMask scrib;
      if (target_domain) {
        scrib = make_scribbles(sample.mask, seed * 1000003ull + split_tag * 101ull + i,
                               m.fg_budget, m.image_budget);
      } else {
        scrib = full_mask(sample.mask);  // source comes fully annotated
      }
      write_sample(out_dir, e, sample, scrib);
      entries.push_back(std::move(e));
    }
    return entries;
  };

  m.train_source = make_split("src", n_source, false, 1);
  m.train_target = make_split("tgt", n_target_train, true, 2);
  m.val = make_split("val", n_val, true, 3);
  m.test_target = make_split("test", n_test, true, 4);

  save_manifest((fs::path(out_dir) / "manifest.json").string(), m);
  return m;
}

void save_manifest(const std::string& path, const DatasetManifest& manifest) {
  nlohmann::json j;
  j["root"] = manifest.root;
  j["seed"] = manifest.seed;
  j["size"] = manifest.size;
  j["params"] = {{"n_source", manifest.n_source},
                 {"n_target_train", manifest.n_target_train},
                 {"n_val", manifest.n_val},
                 {"n_test", manifest.n_test},
                 {"fg_budget", manifest.fg_budget},
                 {"image_budget", manifest.image_budget}};
  nlohmann::json splits;
  auto dump_split = [&](const char* name, const std::vector<ManifestEntry>& entries) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& e : entries) arr.push_back(entry_to_json(e));
    splits[name] = std::move(arr);
  };
  dump_split("train_source", manifest.train_source);
  dump_split("train_target", manifest.train_target);
  dump_split("val", manifest.val);
  dump_split("test_target", manifest.test_target);
  j["splits"] = std::move(splits);

  std::ofstream os(path);
  if (!os) throw IoError("cannot write manifest " + path);
  os << j.dump(2) << "\n";
}

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open manifest " + path);
  nlohmann::json j = nlohmann::json::parse(is);

  DatasetManifest m;
  m.root = j.value("root", ".");
  m.seed = j.value("seed", std::uint64_t{0});
  m.size = j.value("size", 0);
  if (j.contains("params")) {
    const auto& p = j["params"];
    m.n_source = p.value("n_source", 0);
    m.n_target_train = p.value("n_target_train", 0);
    m.n_val = p.value("n_val", 0);
    m.n_test = p.value("n_test", 0);
    m.fg_budget = p.value("fg_budget", 0.07);
    m.image_budget = p.value("image_budget", 0.01);
  }
  auto read_split = [&](const char* name, std::vector<ManifestEntry>& out) {
    for (const auto& e : j.at("splits").at(name)) out.push_back(entry_from_json(e));
  };
  read_split("train_source", m.train_source);
  read_split("train_target", m.train_target);
  read_split("val", m.val);
  read_split("test_target", m.test_target);
  return m;
}

}  // namespace scribda
