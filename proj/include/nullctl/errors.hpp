#pragma once

#include <stdexcept>
#include <string>

namespace nullctl {

/// Invalid input or configuration. Maps to CLI exit status 1.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A computation that could not complete (divergence, non-convergence,
/// failed adjoint gate). Maps to CLI exit status 2.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace nullctl
