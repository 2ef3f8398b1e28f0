#pragma once

#include <stdexcept>
#include <string>

namespace repsim {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor extents or operation arguments that do not fit together.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Malformed file content (bad magic, truncation, out-of-range label...).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Invalid user configuration: unknown keys, out-of-range values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Numerical failure during a run, e.g. a non-finite loss.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace repsim
