#pragma once

#include <stdexcept>
#include <string>

namespace spherehead {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes or an axis out of range.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Input outside the mathematical domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Inverse projection requested at (or numerically at) the north pole.
class PoleSingularityError : public DomainError {
 public:
  using DomainError::DomainError;
};

/// Zero-norm feature row or weight column where a direction is required.
class DegenerateInputError : public DomainError {
 public:
  using DomainError::DomainError;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Inconsistent mutable state, e.g. a queue whose entries no longer match
/// the current feature dimension.
class StateError : public Error {
 public:
  using Error::Error;
};

/// Malformed delimited text. The message carries line (and column) numbers.
class ParseError : public Error {
 public:
  using Error::Error;
};

/// Malformed binary dataset file.
class FormatError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Reports cannot be arranged into the requested table.
class LayoutError : public Error {
 public:
  using Error::Error;
};

/// Training diverged (non-finite loss).
class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace spherehead
