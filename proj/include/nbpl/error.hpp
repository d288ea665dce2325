#pragma once

#include <stdexcept>
#include <string>

namespace nbpl {

// Exception taxonomy. The CLI maps each type to a fixed exit code.

/// Invalid options, flags, or experiment files.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Unreadable or invalid input data.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A welfare maximization could not be carried out.
class SolverError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace nbpl
