#pragma once

#include <stdexcept>
#include <string>

namespace biaslens {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad input data or a violated precondition.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Bad run or provider configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Filesystem or serialization failure.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Anything a score provider can signal.
class ProviderError : public Error {
 public:
  using Error::Error;
};

class NetworkError : public ProviderError {
 public:
  using ProviderError::ProviderError;
};

/// A (prefix, continuation) key absent from a replay fixture or table.
class MissingRecordError : public ProviderError {
 public:
  using ProviderError::ProviderError;
};

/// The prefix/continuation split does not align with an echoed token boundary.
class TokenBoundaryError : public ProviderError {
 public:
  using ProviderError::ProviderError;
};

/// All category masses are zero; no distribution can be formed.
class DegenerateDistributionError : public Error {
 public:
  using Error::Error;
};

}  // namespace biaslens
