#pragma once

#include <stdexcept>
#include <string>

namespace pint {

// Root of every exception thrown by the library. The CLI maps the concrete
// subclasses onto process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Violated precondition (bad arguments, mismatched parameter sets, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public ContractError {
 public:
  using ContractError::ContractError;
};

// NaN/Inf produced by an operation.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Training loss became non-finite.
class DivergenceError : public NumericError {
 public:
  using NumericError::NumericError;
};

// Input whose statistics make an operation meaningless (e.g. constant image).
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class FileNotFoundError : public IoError {
 public:
  using IoError::IoError;
};

// Malformed file contents.
class FormatError : public Error {
 public:
  using Error::Error;
};

class TruncatedError : public FormatError {
 public:
  using FormatError::FormatError;
};

class VersionError : public FormatError {
 public:
  using FormatError::FormatError;
};

// Metric undefined on its inputs (ASD with an empty mask).
class UndefinedMetricError : public Error {
 public:
  using Error::Error;
};

}  // namespace pint
