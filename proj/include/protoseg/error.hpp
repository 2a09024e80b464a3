#pragma once

#include <stdexcept>
#include <string>

namespace protoseg {

/// Error categories; their numeric values double as CLI exit codes.
enum class ErrorKind : int {
  config = 2,
  io = 3,
  numeric = 4,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& what) : Error(ErrorKind::config, what) {}
};

struct IoError : Error {
  explicit IoError(const std::string& what) : Error(ErrorKind::io, what) {}
};

struct NumericError : Error {
  explicit NumericError(const std::string& what) : Error(ErrorKind::numeric, what) {}
};

struct DimensionMismatchError : NumericError {
  DimensionMismatchError(std::size_t a, std::size_t b)
      : NumericError("dimension mismatch: " + std::to_string(a) + " vs " + std::to_string(b)) {}
};

struct ZeroNormError : NumericError {
  ZeroNormError() : NumericError("vector has zero norm") {}
};

}  // namespace protoseg
