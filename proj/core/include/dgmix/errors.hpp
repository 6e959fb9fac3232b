#pragma once

#include <stdexcept>
#include <string>

namespace dgmix {

/// Base class for all dgmix errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor extents do not line up (wrong rank, mismatched dimensions, odd pool extent).
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// An argument value is outside its allowed range (alpha, lambda, labels, one-hot rows).
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values where finite ones are required, or a diverged computation.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// An API was called in a state it does not support (stale cache, mismatched batches).
class UsageError : public Error {
 public:
  using Error::Error;
};

/// A dataset does not satisfy what was asked of it (missing class population, bad counts).
class DataError : public Error {
 public:
  using Error::Error;
};

/// File and network problems: unreadable, truncated, bad magic.
class IoError : public Error {
 public:
  using Error::Error;
};

/// A container file carries a format version this build does not read.
class VersionError : public IoError {
 public:
  using IoError::IoError;
};

/// A container file's trailing checksum does not match its bytes.
class ChecksumError : public IoError {
 public:
  using IoError::IoError;
};

/// A configuration key is unknown or its value rejected.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace dgmix
