#pragma once

#include <stdexcept>
#include <string>

namespace bsplat {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// File could not be opened, read or written.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Malformed, truncated, corrupted or version-mismatched binary data.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf where a finite value is required.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Caller violated an operation precondition.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

}  // namespace bsplat
