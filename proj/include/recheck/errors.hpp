#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace recheck {

/// Base of every error raised by this library. Callers that only care about
/// "something in the pipeline failed" can catch this one type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidAnchor : public Error {
 public:
  using Error::Error;
};

// recheck-detector
class RemoteUnavailable : public Error {
 public:
  using Error::Error;
};
class DetectorTimeout : public Error {
 public:
  using Error::Error;
};
class InsufficientNegatives : public Error {
 public:
  using Error::Error;
};

// experience-pool
class EmptyPool : public Error {
 public:
  using Error::Error;
};
class MalformedRecord : public Error {
 public:
  MalformedRecord(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};
class VersionMismatch : public Error {
 public:
  using Error::Error;
};

// annotation-pipeline
class AnnotatorError : public Error {
 public:
  using Error::Error;
};

// generation-gateway
class BackendError : public Error {
 public:
  using Error::Error;
};
class ContinuationUnsupported : public BackendError {
 public:
  using BackendError::BackendError;
};
class BudgetExceeded : public Error {
 public:
  using Error::Error;
};
class UnknownPrefix : public BackendError {
 public:
  using BackendError::BackendError;
};

// eval-harness
class NoAnswer : public Error {
 public:
  using Error::Error;
};

}  // namespace recheck
