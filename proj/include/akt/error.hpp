#pragma once

#include <stdexcept>
#include <string>

namespace akt {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible shapes, bad axis, width mismatch.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration values (degenerate grid, indivisible extents, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A NaN or Inf was produced or supplied.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Assignment problem without a feasible solution (more rows than columns).
class InfeasibleError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file; the message names the file and line.
class ParseError : public Error {
 public:
  using Error::Error;
};

/// API misuse, e.g. cutmix without a donor sample.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Filesystem failures.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace akt
