#pragma once

#include <stdexcept>
#include <string>

namespace lip2us {

// Base of every error the library throws. kind() is a stable, machine-parsable
// class name surfaced by the CLI.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

struct DimensionError : Error {
  explicit DimensionError(const std::string& what) : Error("dimension_error", what) {}
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& what) : Error("config_error", what) {}
};

struct UsageError : Error {
  explicit UsageError(const std::string& what) : Error("usage_error", what) {}
};

struct BoundsError : Error {
  explicit BoundsError(const std::string& what) : Error("bounds_error", what) {}
};

struct RangeError : Error {
  explicit RangeError(const std::string& what) : Error("range_error", what) {}
};

struct NumericError : Error {
  explicit NumericError(const std::string& what) : Error("numeric_error", what) {}
};

struct IoError : Error {
  explicit IoError(const std::string& what) : Error("io_error", what) {}
};

}  // namespace lip2us
