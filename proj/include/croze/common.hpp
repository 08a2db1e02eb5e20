#pragma once

#include <stdexcept>
#include <string>

namespace croze {

/// Malformed textual or binary input: encodings, CSV rows, batch files.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor or parameter shape contract violation.
class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Numeric failure at run time: non-finite intermediates, singular kernels,
/// undefined statistics.
class ComputeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Filesystem failure.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Inconsistent or unsupported configuration (budget arithmetic, space kind).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace croze
