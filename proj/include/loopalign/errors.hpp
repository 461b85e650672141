#pragma once

#include <stdexcept>
#include <string>

namespace loopalign {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes; the message names both shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Violated calling contract (non-scalar loss, wrong list length, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Invalid or inconsistent configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed or semantically invalid data (records, manifests, labels).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Filesystem failure; the message carries the offending path.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Training diverged (non-finite loss or parameters).
class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace loopalign
