#pragma once

#include <stdexcept>

namespace scribda {

// Invalid operation input: shape mismatch, label out of range, empty scribbles, ...
struct DomainError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Input is valid but exceeds a hard resource guard (brute-force size caps, lattice dim cap).
struct RefusalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Numerical breakdown, e.g. a kernel normalizer collapsing to zero.
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace scribda
