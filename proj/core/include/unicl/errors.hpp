#pragma once

#include <stdexcept>
#include <string>

namespace unicl {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shape or length mismatch between operands.
struct DimensionError : Error {
  using Error::Error;
};

// Malformed input file (CSV, manifest, tensor file).
struct ParseError : Error {
  using Error::Error;
};

// Invalid or inconsistent configuration.
struct ConfigError : Error {
  using Error::Error;
};

// Semantically invalid argument (bad permutation, label mismatch, ...).
struct ValidationError : Error {
  using Error::Error;
};

// Non-finite values or numerically degenerate state.
struct NumericError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

}  // namespace unicl
