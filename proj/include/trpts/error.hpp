// Copyright 2026 The TR-PTS Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace trpts {

/// Base class for every error raised by the library. The C API maps each
/// subclass onto a stable status code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad or inconsistent configuration (exit code 2 at the CLI).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values encountered in a loss, gradient or score (exit code 3).
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Malformed inputs: wrong shapes, out-of-range labels, corrupt files.
class InputError : public Error {
 public:
  using Error::Error;
};

/// Shape mismatch between operands of a tensor operation.
class DimensionError : public InputError {
 public:
  using InputError::InputError;
};

/// API misuse, e.g. calling backward on a non-scalar tensor, or a stage
/// asked to overwrite its outputs without --force.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Missing, unreadable or unwritable files.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace trpts
