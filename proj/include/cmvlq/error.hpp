#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace cmvlq {

enum class ErrorKind {
  dimension,
  symmetry,
  capacity,
  adaptedness,
  constraint,
  numerical,
  convergence,
  config,
  invalid_argument,
  io,
};

std::string_view to_string(ErrorKind kind);

/// Base of every error raised by the library. `kind()` is stable and is what
/// the CLI prints in its machine-readable error line.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Iterative method failed to reach its tolerance; carries the per-iteration
/// residuals so callers can see whether it stalled or diverged.
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& message, std::vector<double> history)
      : Error(ErrorKind::convergence, message), history_(std::move(history)) {}

  const std::vector<double>& history() const noexcept { return history_; }

 private:
  std::vector<double> history_;
};

/// Residual check failed; `location` names the step/node of the worst entry.
class ResidualError : public Error {
 public:
  ResidualError(const std::string& message, double max_residual,
                std::string location)
      : Error(ErrorKind::numerical, message),
        max_residual_(max_residual),
        location_(std::move(location)) {}

  double max_residual() const noexcept { return max_residual_; }
  const std::string& location() const noexcept { return location_; }

 private:
  double max_residual_;
  std::string location_;
};

/// All problems found while parsing a config, not just the first.
class ConfigError : public Error {
 public:
  explicit ConfigError(std::vector<std::string> messages);

  const std::vector<std::string>& messages() const noexcept { return messages_; }

 private:
  std::vector<std::string> messages_;
};

}  // namespace cmvlq
