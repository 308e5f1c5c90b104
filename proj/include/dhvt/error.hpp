#pragma once

#include <stdexcept>
#include <string>

namespace dhvt {

// Base of every error raised by this library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor extents do not fit an operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A configuration value violates a model or layer constraint.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// An API precondition was violated (e.g. non-scalar loss passed to backward).
class ContractError : public Error {
 public:
  using Error::Error;
};

// A NaN or Inf surfaced where finite values were required.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Malformed file contents (bad magic, version, checksum).
class FormatError : public Error {
 public:
  using Error::Error;
};

// File content does not agree with its own configuration.
class ConsistencyError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace dhvt
