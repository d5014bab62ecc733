#pragma once

#include <stdexcept>
#include <string>

namespace gem {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dimension mismatches and invalid hyperparameters. Not recoverable.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed, truncated or incompatible checkpoint / dataset files.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// A loss or gradient became non-finite and the step was aborted.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Attempted parameter update on a frozen model.
class FrozenModelError : public Error {
 public:
  using Error::Error;
};

}  // namespace gem
