#pragma once

#include <stdexcept>
#include <string>

namespace bernnet {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shape disagreement between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A value outside the domain an operation is defined on (e.g. x outside [l,u]).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// NaN or Inf where only finite values are allowed.
class NumericError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// backward() called with a cache that does not belong to the current parameters.
class StaleCacheError : public Error {
 public:
  using Error::Error;
};

}  // namespace bernnet
