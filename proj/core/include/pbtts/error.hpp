#pragma once

#include <stdexcept>
#include <string>

namespace pbtts {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shape disagreement between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Invalid or inconsistent configuration value.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Caller-supplied data that violates an operation's preconditions.
class InputError : public Error {
 public:
  using Error::Error;
};

/// Internal contract violation (wrong pipeline stage, non-scalar loss, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

class AlignmentError : public InputError {
 public:
  using InputError::InputError;
};

class DegenerateCorpusError : public InputError {
 public:
  using InputError::InputError;
};

/// A function that should be deterministic returned different values.
class DeterminismError : public Error {
 public:
  using Error::Error;
};

/// Text parsing failure; the message carries the line number.
class ParseError : public InputError {
 public:
  using InputError::InputError;
};

class IoError : public InputError {
 public:
  using InputError::InputError;
};

/// Corrupt or truncated binary file.
class IntegrityError : public Error {
 public:
  using Error::Error;
};

class VersionError : public Error {
 public:
  using Error::Error;
};

/// Optimization diverged (non-finite loss).
class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace pbtts
