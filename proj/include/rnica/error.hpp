#pragma once

#include <stdexcept>
#include <string>

namespace rnica {

/// Base class for every error thrown by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Array dimensions do not line up.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Input data is unusable (non-finite, empty, degenerate).
class InputError : public Error {
 public:
  using Error::Error;
};

/// An object was used out of sequence (e.g. a tape replayed on a modified net).
class StateError : public Error {
 public:
  using Error::Error;
};

/// A hyperparameter is outside its admissible range.
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// An experiment or generation config is invalid. `field` names the offending key.
class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& what)
      : Error(field.empty() ? what : field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

/// Numerical breakdown: singular matrix, divergence, non-finite gradient.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Random generation could not satisfy its constraints.
class GenerationError : public Error {
 public:
  using Error::Error;
};

}  // namespace rnica
