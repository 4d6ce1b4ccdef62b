#pragma once

#include <complex>
#include <cstdint>
#include <functional>
#include <iostream>
#include <mutex>
#include <numbers>
#include <stdexcept>
#include <string>

namespace ringtc {

using Complex = std::complex<double>;

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

/// Rotation period of a density moving with velocity 2*pi on the unit ring.
inline constexpr double kRotationPeriod = 1.0 / kTwoPi;

// Error hierarchy. ConfigError maps to CLI exit code 2, everything else to 3.

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class ComputeError : public Error {
 public:
  using Error::Error;
};

class ContractViolation : public ComputeError {
 public:
  using ComputeError::ComputeError;
};

class InvalidWindow : public ContractViolation {
 public:
  using ContractViolation::ContractViolation;
};

class EmptyState : public ComputeError {
 public:
  using ComputeError::ComputeError;
};

class BudgetExceeded : public ComputeError {
 public:
  using ComputeError::ComputeError;
};

class NonConvergence : public ComputeError {
 public:
  NonConvergence(const std::string& what, double best_residual)
      : ComputeError(what), best_residual_(best_residual) {}
  double best_residual() const noexcept { return best_residual_; }

 private:
  double best_residual_;
};

class MeasurementAtNode : public ComputeError {
 public:
  using ComputeError::ComputeError;
};

// Minimal logging: notices and warnings go through a replaceable sink so tests
// can capture them.

enum class LogLevel { kInfo, kWarning };

using LogSink = std::function<void(LogLevel, const std::string&)>;

namespace detail {
inline LogSink& log_sink() {
  static LogSink sink = [](LogLevel level, const std::string& msg) {
    std::cerr << (level == LogLevel::kWarning ? "[ringtc warning] " : "[ringtc] ") << msg
              << '\n';
  };
  return sink;
}
inline std::mutex& log_mutex() {
  static std::mutex m;
  return m;
}
}  // namespace detail

inline void set_log_sink(LogSink sink) {
  std::lock_guard lock(detail::log_mutex());
  detail::log_sink() = std::move(sink);
}

inline void log(LogLevel level, const std::string& msg) {
  std::lock_guard lock(detail::log_mutex());
  if (detail::log_sink()) detail::log_sink()(level, msg);
}

inline void log_info(const std::string& msg) { log(LogLevel::kInfo, msg); }
inline void log_warning(const std::string& msg) { log(LogLevel::kWarning, msg); }

}  // namespace ringtc
