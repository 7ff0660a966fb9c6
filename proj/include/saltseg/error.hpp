#pragma once

#include <stdexcept>
#include <string>

namespace saltseg {

// Base of every error the library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor extents disagree with what an operation requires.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Argument outside its documented domain (targets not in {0,1}, bad fraction, ...).
class ValidationError : public Error {
 public:
  using Error::Error;
};

// NaN or Inf surfaced where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Operation called in the wrong object state (backward before forward).
class StateError : public Error {
 public:
  using Error::Error;
};

// Dataset and image file problems.
class DataError : public Error {
 public:
  using Error::Error;
};

class LoadError : public DataError {
 public:
  using DataError::DataError;
};

class DimensionError : public DataError {
 public:
  using DataError::DataError;
};

class FormatError : public DataError {
 public:
  using DataError::DataError;
};

// Checkpoint persistence. Each failure mode has its own type so callers
// (and tests) can tell them apart.
class CheckpointError : public Error {
 public:
  using Error::Error;
};

class BadMagicError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

class BadVersionError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

class TruncatedError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

class IntegrityError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

class IncompatibleError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

}  // namespace saltseg
