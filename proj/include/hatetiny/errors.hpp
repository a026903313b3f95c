#pragma once

#include <stdexcept>
#include <string>

namespace hatetiny {

// Shape or dimension mismatch between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Index out of range: token ids, axes, coordinates, target classes.
class IndexError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

// Operation applied in the wrong object state (double attach, backward on a
// consumed tape, merge without adapters).
class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Caller violated an API precondition.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Invalid configuration: unknown preset, bad JSON field, method mismatch.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad input data: CSV parse failures, missing files, undersized classes.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite values where finite math is required.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed checkpoint files.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace hatetiny
