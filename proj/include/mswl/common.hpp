#pragma once

#include <cmath>
#include <cstdarg>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace mswl {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Bad or degenerate data: rank-deficient designs, constant columns,
/// malformed CSV rows, infeasible cohort configs.
struct DataError : Error {
  using Error::Error;
};

/// Numerical solver misuse (non-finite inputs, undefined lambda_max).
struct SolverError : Error {
  using Error::Error;
};

/// Violations of the round protocol: duplicate or missing reports,
/// wrong-round messages, traffic after termination.
struct ProtocolError : Error {
  using Error::Error;
};

/// Malformed wire bytes: unknown type tags, schema violations.
struct WireError : Error {
  using Error::Error;
};

struct TimeoutError : ProtocolError {
  using ProtocolError::ProtocolError;
};

struct ConfigError : Error {
  using Error::Error;
};

/// Serializes a double with 17 significant digits, enough to make the
/// text form round-trip to the identical bit pattern.
inline std::string format_real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline bool all_finite(const Matrix& m) { return m.allFinite(); }
inline bool all_finite(const Vector& v) { return v.allFinite(); }

enum class LogLevel : int { off = 0, error = 1, warn = 2, info = 3, debug = 4 };

inline LogLevel log_level() {
  static const LogLevel level = [] {
    const char* env = std::getenv("MSWL_LOG");
    if (!env) return LogLevel::warn;
    std::string s(env);
    if (s == "off") return LogLevel::off;
    if (s == "error") return LogLevel::error;
    if (s == "warn") return LogLevel::warn;
    if (s == "info") return LogLevel::info;
    if (s == "debug") return LogLevel::debug;
    return LogLevel::warn;
  }();
  return level;
}

inline void log_line(LogLevel lv, const std::string& msg) {
  static std::mutex mu;
  if (static_cast<int>(lv) > static_cast<int>(log_level())) return;
  const char* tag = lv == LogLevel::error  ? "error"
                    : lv == LogLevel::warn ? "warn"
                    : lv == LogLevel::info ? "info"
                                           : "debug";
  std::lock_guard<std::mutex> lock(mu);
  std::cerr << "[mswl:" << tag << "] " << msg << "\n";
}

}  // namespace mswl
