#pragma once

#include <stdexcept>
#include <string>

namespace metalab {

/// Raised when a loss, gradient or parameter becomes NaN or infinite.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid run configuration or command-line usage.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An iterative solver exhausted its sweep budget.
class ConvergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace metalab
