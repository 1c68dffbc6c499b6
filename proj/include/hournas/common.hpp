#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace hournas {

#ifdef HOURNAS_FLOAT32
using Real = float;
#else
using Real = double;
#endif

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shape or matrix dimension disagreement.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid or inconsistent configuration (maps to CLI exit code 2).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Unreadable, malformed or inconsistent data files (CLI exit code 3).
class DataError : public Error {
 public:
  using Error::Error;
};

}  // namespace hournas
