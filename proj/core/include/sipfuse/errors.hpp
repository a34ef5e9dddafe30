#pragma once

#include <stdexcept>
#include <string>

namespace sipfuse {

// Failure classes. The CLI maps each to a distinct exit code.

/// Shape or extent mismatch between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Invalid argument value (negative stride, unknown enum label, ...).
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Non-finite values or an empty reduction support.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or corrupted binary file.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dataset content violates an invariant (label range, duplicate id, ...).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Experiment configuration rejected by validation.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace sipfuse
