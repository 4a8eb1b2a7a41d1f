#pragma once

#include <stdexcept>
#include <string>

namespace whitenseq {

// Error taxonomy used across the library. The CLI maps these to exit codes:
// ConfigError -> 2, everything else -> 1.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Structural problems: wrong dimensions, indivisible group counts, mismatched shapes.
class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& msg) : Error(msg) {}
};

// Numerical failures: non-convergence, non-positive-definite inputs, NaN losses.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& msg) : Error(msg) {}
};

// Inputs that are structurally valid but carry no usable information
// (zero-norm columns, empty splits, too-short sequences).
class DegenerateInputError : public Error {
 public:
  explicit DegenerateInputError(const std::string& msg) : Error(msg) {}
};

// Malformed files; message carries the offending line number where known.
class ParseError : public Error {
 public:
  explicit ParseError(const std::string& msg) : Error(msg) {}
};

// Invalid configuration: unknown keys, missing required inputs for a variant,
// bad flag combinations.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// Filesystem failures; message carries the path.
class IoError : public Error {
 public:
  explicit IoError(const std::string& msg) : Error(msg) {}
};

}  // namespace whitenseq
