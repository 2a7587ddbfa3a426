#include "scribda/tensor_io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

namespace scribda {

namespace {

constexpr char kMagic[4] = {'T', 'G', 'R', 'D'};
constexpr std::uint8_t kVersion = 0x01;
constexpr std::uint8_t kUnlabeledByte = 255;

void put_u64le(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t get_u64le(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

void put_f64le(std::ostream& os, double d) {
  put_u64le(os, std::bit_cast<std::uint64_t>(d));
}

double get_f64le(std::istream& is) {
  return std::bit_cast<double>(get_u64le(is));
}

}  // namespace

std::uint64_t TgTensor::element_count() const {
  std::uint64_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

void write_tg(const std::string& path, const TgTensor& tensor) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path + " for writing");
  os.write(kMagic, 4);
  os.put(static_cast<char>(kVersion));
  os.put(static_cast<char>(tensor.dtype));
  os.put(static_cast<char>(tensor.dims.size()));
  for (auto d : tensor.dims) put_u64le(os, d);
  const std::uint64_t n = tensor.element_count();
  if (tensor.dtype == TgDtype::kFloat64) {
    if (tensor.f64.size() != n) throw IoError("tg payload size mismatch for " + path);
    for (double v : tensor.f64) put_f64le(os, v);
  } else {
    if (tensor.u8.size() != n) throw IoError("tg payload size mismatch for " + path);
    os.write(reinterpret_cast<const char*>(tensor.u8.data()),
             static_cast<std::streamsize>(tensor.u8.size()));
  }
  if (!os) throw IoError("write failed for " + path);
}

TgTensor read_tg(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) {
    throw IoError(path + " is not a .tg file (bad magic)");
  }
  int version = is.get();
  if (version != kVersion) throw IoError(path + ": unsupported .tg version");
  int dtype_byte = is.get();
  if (dtype_byte != 0x00 && dtype_byte != 0x01) throw IoError(path + ": unknown .tg dtype");
  int ndim = is.get();
  if (ndim < 1 || ndim > 8) throw IoError(path + ": bad .tg rank");

  TgTensor t;
  t.dtype = static_cast<TgDtype>(dtype_byte);
  t.dims.resize(ndim);
  for (int i = 0; i < ndim; ++i) t.dims[i] = get_u64le(is);
  const std::uint64_t n = t.element_count();
  if (n == 0 || n > (1ull << 32)) throw IoError(path + ": unreasonable .tg element count");
  if (t.dtype == TgDtype::kFloat64) {
    t.f64.resize(n);
    for (std::uint64_t i = 0; i < n; ++i) t.f64[i] = get_f64le(is);
  } else {
    t.u8.resize(n);
    is.read(reinterpret_cast<char*>(t.u8.data()), static_cast<std::streamsize>(n));
  }
  if (!is) throw IoError(path + ": truncated .tg payload");
  return t;
}

void save_grid(const std::string& path, const TensorGrid& grid) {
  TgTensor t;
  t.dtype = TgDtype::kFloat64;
  t.dims = {static_cast<std::uint64_t>(grid.height), static_cast<std::uint64_t>(grid.width),
            static_cast<std::uint64_t>(grid.channels)};
  t.f64 = grid.data;
  write_tg(path, t);
}

TensorGrid load_grid(const std::string& path) {
  TgTensor t = read_tg(path);
  if (t.dtype != TgDtype::kFloat64 || t.dims.size() != 3) {
    throw IoError(path + ": expected a float64 rank-3 tensor");
  }
  TensorGrid g(static_cast<int>(t.dims[0]), static_cast<int>(t.dims[1]),
               static_cast<int>(t.dims[2]), std::move(t.f64));
  if (!g.all_finite()) throw IoError(path + ": non-finite grid values");
  return g;
}

void save_labels(const std::string& path, const LabelMap& labels) {
  TgTensor t;
  t.dtype = TgDtype::kUint8;
  t.dims = {static_cast<std::uint64_t>(labels.height), static_cast<std::uint64_t>(labels.width)};
  t.u8.reserve(labels.labels.size());
  for (int v : labels.labels) {
    if (v < 0 || v > 254) throw IoError(path + ": label out of uint8 range");
    t.u8.push_back(static_cast<std::uint8_t>(v));
  }
  write_tg(path, t);
}

LabelMap load_labels(const std::string& path) {
  TgTensor t = read_tg(path);
  if (t.dtype != TgDtype::kUint8 || t.dims.size() != 2) {
    throw IoError(path + ": expected a uint8 rank-2 tensor");
  }
  LabelMap m(static_cast<int>(t.dims[0]), static_cast<int>(t.dims[1]));
  for (std::size_t i = 0; i < t.u8.size(); ++i) m.labels[i] = t.u8[i];
  return m;
}

void save_scribbles(const std::string& path, const ScribbleMask& mask) {
  TgTensor t;
  t.dtype = TgDtype::kUint8;
  t.dims = {static_cast<std::uint64_t>(mask.height), static_cast<std::uint64_t>(mask.width)};
  t.u8.reserve(mask.entries.size());
  for (int v : mask.entries) {
    if (v == ScribbleMask::kUnlabeled) {
      t.u8.push_back(kUnlabeledByte);
    } else if (v >= 0 && v < kUnlabeledByte) {
      t.u8.push_back(static_cast<std::uint8_t>(v));
    } else {
      throw IoError(path + ": scribble label out of uint8 range");
    }
  }
  write_tg(path, t);
}

ScribbleMask load_scribbles(const std::string& path) {
  TgTensor t = read_tg(path);
  if (t.dtype != TgDtype::kUint8 || t.dims.size() != 2) {
    throw IoError(path + ": expected a uint8 rank-2 tensor");
  }
  ScribbleMask m(static_cast<int>(t.dims[0]), static_cast<int>(t.dims[1]));
  for (std::size_t i = 0; i < t.u8.size(); ++i) {
    m.entries[i] = (t.u8[i] == kUnlabeledByte) ? ScribbleMask::kUnlabeled : t.u8[i];
  }
  return m;
}

void save_soft(const std::string& path, const SoftLabeling& soft) {
  TgTensor t;
  t.dtype = TgDtype::kFloat64;
  t.dims = {static_cast<std::uint64_t>(soft.height), static_cast<std::uint64_t>(soft.width),
            static_cast<std::uint64_t>(soft.classes)};
  t.f64 = soft.probs;
  write_tg(path, t);
}

SoftLabeling load_soft(const std::string& path) {
  TgTensor t = read_tg(path);
  if (t.dtype != TgDtype::kFloat64 || t.dims.size() != 3) {
    throw IoError(path + ": expected a float64 rank-3 tensor");
  }
  SoftLabeling p(static_cast<int>(t.dims[0]), static_cast<int>(t.dims[1]),
                 static_cast<int>(t.dims[2]));
  p.probs = std::move(t.f64);
  return p;
}

}  // namespace scribda
