#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace lsnet {

/// Base class for all library errors. The CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid shapes, hyperparameters or specs.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed or truncated files.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Well-formed files whose content is invalid (e.g. a label out of range).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Weight file written for a different model spec.
class IncompatibleError : public Error {
 public:
  using Error::Error;
};

/// Missing entry in a gradient map or parameter store.
class LookupError : public Error {
 public:
  using Error::Error;
};

/// Integer overflow in MAC/parameter tallies.
class ArithmeticError : public Error {
 public:
  using Error::Error;
};

/// NaN or Inf produced by an operation.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, std::size_t step)
      : Error(what + " at step " + std::to_string(step)), step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

}  // namespace lsnet
