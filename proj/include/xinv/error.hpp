#pragma once

#include <stdexcept>
#include <string>

namespace xinv {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor extents incompatible with an operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Argument outside the mathematical domain of an operation (e.g. log of 0).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Malformed input value such as a label outside {0,1}.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Inconsistent run configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// File-format or text parse failure.
class ParseError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace xinv
