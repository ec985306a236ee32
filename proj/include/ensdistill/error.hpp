#pragma once

#include <stdexcept>
#include <string>

namespace ensdistill {

/// Root of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Matrix or vector dimensions that do not line up.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A loss or a parameter became NaN/Inf during training.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

/// An argument outside the mathematical domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Sharpening preconditions (entropy ordering, argmax agreement) violated.
class SharpeningError : public DomainError {
 public:
  using DomainError::DomainError;
};

/// Mixing weight for a misclassified sample at or below its lower bound.
class BoundViolationError : public DomainError {
 public:
  using DomainError::DomainError;
};

/// Misclassification-only operation called on a correctly classified sample.
class NotMisclassifiedError : public DomainError {
 public:
  using DomainError::DomainError;
};

/// Malformed on-disk data.
class FormatError : public Error {
 public:
  using Error::Error;
};

class BadMagicError : public FormatError {
 public:
  using FormatError::FormatError;
};

class TruncatedError : public FormatError {
 public:
  using FormatError::FormatError;
};

class CountMismatchError : public FormatError {
 public:
  using FormatError::FormatError;
};

class ChecksumError : public FormatError {
 public:
  using FormatError::FormatError;
};

class VersionError : public FormatError {
 public:
  using FormatError::FormatError;
};

/// Structured-document parse failure; `what()` carries the offending field path.
class ParseError : public FormatError {
 public:
  ParseError(std::string field_path, const std::string& message)
      : FormatError(field_path + ": " + message), field_path_(std::move(field_path)) {}

  const std::string& field_path() const noexcept { return field_path_; }

 private:
  std::string field_path_;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class MissingArtifactError : public Error {
 public:
  using Error::Error;
};

}  // namespace ensdistill
