#pragma once

#include <stdexcept>
#include <string>

namespace anatcl {

// Base class for all library errors.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad caller input: shape mismatch, out-of-range index, invalid config.
struct InvalidArgument : Error {
  using Error::Error;
};

// File / parse problems. Parse errors carry the offending line number.
struct IoError : Error {
  using Error::Error;
};

// Degenerate numeric input (zero-norm vector, non-finite element).
struct DegenerateInput : Error {
  using Error::Error;
};

// Runtime numeric failure (NaN loss mid-training and the like).
struct NumericError : Error {
  using Error::Error;
};

}  // namespace anatcl
