#pragma once

#include <stdexcept>
#include <string>

namespace dcap {

/// Base class for all errors raised by this library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes or axes do not line up.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A precondition of an operation was violated.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Invalid model or run configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed or empty input data.
class DataError : public Error {
 public:
  using Error::Error;
};

/// File could not be read or written.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Checkpoint file is invalid, truncated or incompatible.
class CheckpointError : public Error {
 public:
  using Error::Error;
};

/// A metric is undefined for the given inputs.
class MetricError : public Error {
 public:
  using Error::Error;
};

/// Training aborted (divergence, non-finite gradients).
class TrainingError : public Error {
 public:
  using Error::Error;
};

/// A verification oracle could not be evaluated.
class VerifyError : public Error {
 public:
  using Error::Error;
};

}  // namespace dcap
