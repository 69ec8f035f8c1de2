#pragma once

#include <stdexcept>
#include <string>

namespace nid {

// Base for every error raised by the library. The CLI maps the concrete
// kind onto its exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual int exit_code() const noexcept { return 1; }
};

// Invalid or inconsistent configuration (exit code 2).
class ConfigError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 2; }
};

// Malformed or semantically invalid input data (exit code 3).
class DataError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 3; }
};

// Non-finite values during optimization (exit code 4).
class NumericError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 4; }
};

}  // namespace nid
