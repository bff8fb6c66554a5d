#pragma once

#include <stdexcept>
#include <string>

namespace hts {

// Base for every failure raised by the library. Subtypes let the CLI map
// failures onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad run configuration or invalid user-supplied arguments.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Dataset ingestion or episode sampling failures.
class DataError : public Error {
 public:
  using Error::Error;
};

// Tensor shape / size contract violations.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Non-finite losses, unusable checkpoints and other runtime faults.
class RuntimeFault : public Error {
 public:
  using Error::Error;
};

}  // namespace hts
