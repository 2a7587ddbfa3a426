#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "scribda/grid.hpp"

namespace scribda {

struct ManifestEntry {
  std::string id;
  std::string image;      // paths relative to the manifest directory
  std::string mask;
  std::string scribbles;
  std::string domain;     // "source" or "target"
};

struct DatasetManifest {
  std::string root;
  std::uint64_t seed = 0;
  int size = 64;
  int n_source = 0, n_target_train = 0, n_val = 0, n_test = 0;
  double fg_budget = 0.07;
  double image_budget = 0.01;
  std::vector<ManifestEntry> train_source;
  std::vector<ManifestEntry> train_target;
  std::vector<ManifestEntry> val;
  std::vector<ManifestEntry> test_target;
};

struct SynthSample {
  TensorGrid image;  // H x W x 1, values in [0, 1]
  LabelMap mask;     // binary, 1 = lesion
};

// One blob-on-textured-background image. Source: bright blob on a dark, softly
// blotched background. Target: inverted contrast with a striped, speckled
// texture, the cross-modality shift stand-in.
SynthSample make_sample(std::mt19937_64& rng, int size, bool target_domain);

// Sparse annotation: a random walk inside the eroded foreground covering about
// fg_budget of the lesion, plus background strokes away from the lesion until
// about image_budget of all pixels is labeled. Falls back to a single-pixel
// lesion scribble when the foreground is too small to erode.
ScribbleMask make_scribbles(const LabelMap& mask, std::uint64_t seed, double fg_budget = 0.07,
                            double image_budget = 0.01);

// Writes the full two-domain benchmark under out_dir and returns its manifest.
DatasetManifest generate(std::uint64_t seed, int n_source, int n_target_train, int n_val,
                         int n_test, int size, const std::string& out_dir);

void save_manifest(const std::string& path, const DatasetManifest& manifest);
DatasetManifest load_manifest(const std::string& path);

}  // namespace scribda
