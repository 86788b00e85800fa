#pragma once

#include <stdexcept>
#include <string>

namespace softconform {

/// Base class for every error thrown by this library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Filesystem or socket failure (unreadable path, bind failure, lost peer).
class IoError : public Error {
 public:
  using Error::Error;
};

/// Malformed input data: CSV/XES/model files, wire lines, tampered matrices.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// A precondition or argument check failed (alpha out of range, empty log,
/// preparing an already prepared model). The CLI maps these to exit code 2.
class ValidationError : public Error {
 public:
  using Error::Error;
};

}  // namespace softconform
