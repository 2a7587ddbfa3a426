#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "scribda/grid.hpp"

namespace scribda {

// Binary tensor container ".tg":
//   magic "TGRD", version 0x01, dtype byte (0x00 float64, 0x01 uint8),
//   ndim byte, ndim little-endian u64 dims, row-major payload.
// Scribble masks are stored as uint8 with 255 = unlabeled.

enum class TgDtype : std::uint8_t { kFloat64 = 0x00, kUint8 = 0x01 };

struct TgTensor {
  TgDtype dtype = TgDtype::kFloat64;
  std::vector<std::uint64_t> dims;
  std::vector<double> f64;       // filled when dtype == kFloat64
  std::vector<std::uint8_t> u8;  // filled when dtype == kUint8

  std::uint64_t element_count() const;
};

void write_tg(const std::string& path, const TgTensor& tensor);
TgTensor read_tg(const std::string& path);

void save_grid(const std::string& path, const TensorGrid& grid);
TensorGrid load_grid(const std::string& path);

void save_labels(const std::string& path, const LabelMap& labels);
LabelMap load_labels(const std::string& path);

void save_scribbles(const std::string& path, const ScribbleMask& mask);
ScribbleMask load_scribbles(const std::string& path);

void save_soft(const std::string& path, const SoftLabeling& soft);
SoftLabeling load_soft(const std::string& path);

}  // namespace scribda
