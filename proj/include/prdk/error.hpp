#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace prdk {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration values (bad kernel size, unknown mode, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf produced by an operation, or a diverging optimization.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Unrecognized file contents (bad magic, unsupported version, bad schema).
class FormatError : public Error {
 public:
  using Error::Error;
};

class TruncationError : public FormatError {
 public:
  TruncationError(const std::string& what, std::size_t offset)
      : FormatError(what + " (truncated at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

class DimensionError : public FormatError {
 public:
  using FormatError::FormatError;
};

}  // namespace prdk
