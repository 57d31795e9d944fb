#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace alphaforge {

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

inline bool IsFiniteValue(double x) { return std::isfinite(x); }

// Non-finite intermediates are canonicalized to NaN so that a factor cell is
// either a usable double or NaN, never +-inf.
inline double Canon(double x) { return std::isfinite(x) ? x : kNaN; }

enum class ErrorKind {
  kConfig,   // bad flags, bad config file, inconsistent parameters
  kData,     // malformed input data, schema violations
  kRuntime,  // failures while computing
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const { return kind_; }

  int exit_code() const {
    switch (kind_) {
      case ErrorKind::kConfig:
        return 2;
      case ErrorKind::kData:
        return 3;
      case ErrorKind::kRuntime:
        return 4;
    }
    return 4;
  }

 private:
  ErrorKind kind_;
};

inline Error ConfigError(const std::string& message) {
  return Error(ErrorKind::kConfig, message);
}
inline Error DataError(const std::string& message) {
  return Error(ErrorKind::kData, message);
}
inline Error RuntimeError(const std::string& message) {
  return Error(ErrorKind::kRuntime, message);
}

}  // namespace alphaforge
