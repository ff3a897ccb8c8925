// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace rdte {

/// Base for every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible or invalid tensor extents.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid layer or model configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Violated API contract (e.g. backward from a non-scalar).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Malformed file contents: bad magic, version, header or value range.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// File ended before the declared payload.
class TruncationError : public FormatError {
 public:
  using FormatError::FormatError;
};

class NotFoundError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values where finite ones are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace rdte
