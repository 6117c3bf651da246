#pragma once

#include <stdexcept>
#include <string>

namespace relens {

// Bad configuration: unknown convention, missing field, invalid hyperparameter.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller passed something outside an operation's preconditions.
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// NaN/Inf showed up in a numeric iterate.
class NumericError : public std::runtime_error {
 public:
  NumericError(const std::string& what, int step) : std::runtime_error(what), step_(step) {}
  int step() const { return step_; }

 private:
  int step_;
};

// A backend failed to produce a distribution.
class BackendError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed wire frame. The offending frame text is kept for diagnostics.
class ProtocolError : public BackendError {
 public:
  ProtocolError(const std::string& what, std::string frame)
      : BackendError(what + " (frame: " + frame + ")"), frame_(std::move(frame)) {}
  const std::string& frame() const { return frame_; }

 private:
  std::string frame_;
};

// Remote peer did not answer in time. Callers may retry.
class TimeoutError : public BackendError {
 public:
  using BackendError::BackendError;
};

}  // namespace relens
