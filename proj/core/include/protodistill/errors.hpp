#pragma once

#include <stdexcept>
#include <string>

namespace protodistill {

// Root of every exception thrown by the library. The CLI maps the concrete
// subclass onto a process exit code (see tools/src/cli.cpp).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor shapes or model dimensions.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf produced by a forward or backward pass, or a diverging run.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Argument outside a function's mathematical domain.
class DomainError : public NumericError {
 public:
  using NumericError::NumericError;
};

// API misuse: non-scalar loss passed to backward, missing gradient, empty lists.
class UsageError : public Error {
 public:
  using Error::Error;
};

// Malformed numeric input to an algorithm (non-square matrix, non-finite entry).
class InputError : public UsageError {
 public:
  using UsageError::UsageError;
};

// Inconsistent configuration (teacher/student mismatch, invalid hyperparameters).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Infeasible synthetic dataset description.
class SpecError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

// Problems with the data itself (empty partitions, bad labels).
class DataError : public Error {
 public:
  using Error::Error;
};

class ValidationError : public DataError {
 public:
  using DataError::DataError;
};

class CorruptionError : public DataError {
 public:
  using DataError::DataError;
};

class FileError : public DataError {
 public:
  using DataError::DataError;
};

}  // namespace protodistill
