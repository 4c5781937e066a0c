#pragma once

#include <stdexcept>
#include <string>

namespace lddmm {

/// Base class of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid parameters or configuration (maps to CLI exit code 2).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file contents.
class ParseError : public Error {
 public:
  using Error::Error;
};

/// Filesystem failures.
class IoError : public Error {
 public:
  using Error::Error;
};

/// NaN/overflow detected during a computation (maps to CLI exit code 3).
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Gradient requested from potentials that did not reach the Sinkhorn tolerance.
class ConvergenceError : public NumericError {
 public:
  using NumericError::NumericError;
};

}  // namespace lddmm
