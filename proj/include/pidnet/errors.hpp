#pragma once

#include <stdexcept>
#include <string>

namespace pidnet {

/// Non-finite loss, gradient or function value.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration value, unknown key, or inconsistent settings.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Checkpoint does not match the model it is loaded into.
class CheckpointMismatch : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace pidnet
