#pragma once

#include <stdexcept>
#include <string>

namespace mda {

// Validation problems: bad arguments, mismatched shapes, malformed files.
struct InvalidArgument : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct DimensionError : InvalidArgument {
  using InvalidArgument::InvalidArgument;
};

// Numerical failures at runtime.
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct FactorizationError : NumericalError {
  using NumericalError::NumericalError;
};

struct DegenerateInput : NumericalError {
  using NumericalError::NumericalError;
};

// Checkpoint container I/O. `code` is one of: bad-magic, truncated,
// bad-layout, io.
struct IoError : std::runtime_error {
  IoError(std::string code_, const std::string& what_)
      : std::runtime_error(code_ + ": " + what_), code(std::move(code_)) {}
  std::string code;
};

}  // namespace mda
