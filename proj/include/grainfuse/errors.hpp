#pragma once

#include <stdexcept>
#include <string>

namespace grainfuse {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input outside the mathematical domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Invalid or missing configuration. CLI exit code 2.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed or truncated tensor container.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// NaN loss, vanishing particle weights. CLI exit code 3.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Checkpoint/observation modality mismatch. CLI exit code 4.
class IncompatibleError : public Error {
 public:
  using Error::Error;
};

/// Task requested on reconstructions that lack the needed modality.
class UnsupportedTaskError : public Error {
 public:
  using Error::Error;
};

}  // namespace grainfuse
