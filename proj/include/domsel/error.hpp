#pragma once

#include <stdexcept>
#include <string>

namespace domsel {

/// Bad input: malformed files, invalid configuration, violated preconditions.
/// The CLI maps this to exit code 1.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A numerical or training failure (singular solve, divergent loss, ...).
/// The CLI maps this to exit code 2.
class ComputationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace domsel
