#pragma once

#include <stdexcept>
#include <string>

namespace qpseg {

// Base of every error thrown by the library. The CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor shapes or spatial sizes do not fit together.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// An argument is outside its documented range.
class ParameterError : public Error {
 public:
  using Error::Error;
};

// An object was used in the wrong state (e.g. a stale forward cache).
class StateError : public Error {
 public:
  using Error::Error;
};

// A non-finite value showed up where finite input is required.
class NumericError : public Error {
 public:
  using Error::Error;
};

// A secant quantity would divide by a zero previous step.
class DegenerateError : public Error {
 public:
  using Error::Error;
};

// A metric is undefined for the accumulated data (e.g. no pixels counted).
class UndefinedMetricError : public Error {
 public:
  using Error::Error;
};

// Input data violates its contract (label out of range, ...).
class DataError : public Error {
 public:
  using Error::Error;
};

// Malformed file content.
class FormatError : public DataError {
 public:
  using DataError::DataError;
};

// File missing or not readable/writable.
class IoError : public DataError {
 public:
  using DataError::DataError;
};

// Every repetition of an experiment diverged.
class ExperimentError : public Error {
 public:
  using Error::Error;
};

}  // namespace qpseg
