#pragma once

#include <stdexcept>
#include <string>

namespace sigfuzz {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Codec errors.
class SchemaError : public Error {
 public:
  using Error::Error;
};
class SizeError : public Error {
 public:
  using Error::Error;
};
class TruncatedError : public Error {
 public:
  using Error::Error;
};
class UnknownFieldError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};
class TransportError : public Error {
 public:
  using Error::Error;
};
class NoReachablePortError : public Error {
 public:
  using Error::Error;
};

}  // namespace sigfuzz
