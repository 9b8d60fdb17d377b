#pragma once

#include <stdexcept>
#include <string>

namespace cvs {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration value or parameter out of its declared range.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Tensor or graph shapes that do not line up.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Data that violates a domain invariant (labels, mask values, manifests).
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Missing or unreadable files.
class LoadError : public Error {
 public:
  using Error::Error;
};

/// Training diverged or produced a non-finite value.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace cvs
