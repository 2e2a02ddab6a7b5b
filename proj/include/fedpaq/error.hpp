#pragma once

#include <stdexcept>
#include <string>

namespace fedpaq {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A precondition on an argument was violated (non-finite input, r > n, ...).
class InvalidInput : public Error {
 public:
  using Error::Error;
};

/// A byte buffer or file does not follow the expected layout.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// The operation is not defined for this kind of objective.
class Unsupported : public Error {
 public:
  using Error::Error;
};

/// A run configuration is malformed or violates an invariant.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace fedpaq
