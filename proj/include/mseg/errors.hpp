#pragma once

#include <stdexcept>
#include <string>

namespace mseg {

/// Bad arguments, shape mismatches, config violations. CLI exit code 1.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Missing or unreadable files. CLI exit code 2.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// NaN/Inf encountered during training. CLI exit code 3.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class CheckpointError : public IoError {
 public:
  using IoError::IoError;
};

class BadMagicError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

class UnsupportedVersionError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

class TruncatedFileError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

#define MSEG_CHECK(cond, msg)                                \
  do {                                                       \
    if (!(cond)) throw ::mseg::ValidationError(std::string(msg)); \
  } while (0)

}  // namespace mseg
