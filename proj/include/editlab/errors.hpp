#pragma once

#include <stdexcept>
#include <string>

namespace editlab {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Argument outside the mathematical domain of an operation (bad timestep,
/// dimension mismatch, alpha_bar out of range).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// A condition that cannot be resolved against the model.
class ConditionError : public Error {
 public:
  using Error::Error;
};

/// Invalid or incomplete experiment configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// An iterative procedure ran away (inversion refinement, drag optimization).
class DivergenceError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values appeared in a computation.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Thrown by a sampler hook to stop a reverse run early.
class HookAbort : public Error {
 public:
  using Error::Error;
};

}  // namespace editlab
