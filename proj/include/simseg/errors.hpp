#pragma once

#include <stdexcept>
#include <string>

namespace simseg {

// Base of every error thrown by the library. exit_code() is what the CLI
// returns when the error escapes a command.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual int exit_code() const { return 1; }
  virtual const char* kind() const { return "internal"; }
};

class ConfigError : public Error {
 public:
  using Error::Error;
  int exit_code() const override { return 2; }
  const char* kind() const override { return "config"; }
};

// Shape mismatches and out-of-range arguments.
class InputError : public Error {
 public:
  using Error::Error;
  int exit_code() const override { return 3; }
  const char* kind() const override { return "input"; }
};

class DataError : public Error {
 public:
  using Error::Error;
  int exit_code() const override { return 3; }
  const char* kind() const override { return "data"; }
};

class CheckpointError : public Error {
 public:
  using Error::Error;
  int exit_code() const override { return 4; }
  const char* kind() const override { return "checkpoint"; }
};

// Raised when parameters cannot be carried from one architecture to another.
class TransplantError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
  const char* kind() const override { return "transplant"; }
};

}  // namespace simseg
