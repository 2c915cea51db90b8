#pragma once

#include <stdexcept>
#include <string>

namespace convar {

/// Input that violates a documented precondition (bad sites, malformed files,
/// out-of-support parameters). The CLI maps it to exit code 2.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A numerical failure inside an algorithm (non-convergence, NaN state).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace convar
