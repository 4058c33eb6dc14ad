#pragma once

#include <stdexcept>
#include <string>

namespace magic {

/// Base of every error the library throws. `category()` is a stable,
/// machine-readable token used by the CLI error line.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual const char* category() const noexcept = 0;
};

/// Shape or topology mismatch; the message names the offending dimensions.
class ConfigError : public Error {
 public:
  using Error::Error;
  const char* category() const noexcept override { return "config"; }
};

/// Bad data handed to a pure function (out-of-range sample, wrong channel count).
class InputError : public Error {
 public:
  using Error::Error;
  const char* category() const noexcept override { return "input"; }
};

/// API called in the wrong state (push after frame end, double flush).
class UsageError : public Error {
 public:
  using Error::Error;
  const char* category() const noexcept override { return "usage"; }
};

/// Invariant broken inside the library itself.
class InternalError : public Error {
 public:
  using Error::Error;
  const char* category() const noexcept override { return "internal"; }
};

class IoError : public Error {
 public:
  using Error::Error;
  const char* category() const noexcept override { return "io"; }
};

/// A required input file or directory does not exist.
class NotFoundError : public IoError {
 public:
  using IoError::IoError;
  const char* category() const noexcept override { return "not_found"; }
};

class TrainingError : public Error {
 public:
  using Error::Error;
  const char* category() const noexcept override { return "training"; }
};

class CheckpointError : public Error {
 public:
  enum class Kind { kVersionMismatch, kTruncatedPayload, kConfigHashMismatch, kContentHashMismatch, kMalformed };

  CheckpointError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }
  const char* category() const noexcept override { return "checkpoint"; }

 private:
  Kind kind_;
};

}  // namespace magic
