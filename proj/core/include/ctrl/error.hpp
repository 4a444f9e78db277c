#pragma once

#include <stdexcept>
#include <string>

namespace ctrl {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor dimensions do not agree with what an operation requires.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid hyperparameters, dimensions or flags.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed corpus or curve file. The message carries the line number.
class ParseError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Token id outside the embedding table.
class LookupError : public Error {
 public:
  using Error::Error;
};

/// Input for which the result is undefined (e.g. an all-zero loss mask).
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

/// Checkpoint cannot be decoded or does not fit the model it is loaded into.
class CheckpointError : public Error {
 public:
  using Error::Error;
};

}  // namespace ctrl
