#pragma once

#include <stdexcept>
#include <string>

namespace remav {

// Base of every error the library raises. `kind()` is a stable machine-readable tag.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& message) : std::runtime_error(message) {}
  virtual const char* kind() const noexcept { return "error"; }
};

class DimensionError : public Error {
 public:
  DimensionError(const std::string& what, std::size_t expected, std::size_t actual)
      : Error(what + ": expected length " + std::to_string(expected) + ", got " +
              std::to_string(actual)),
        expected_(expected),
        actual_(actual) {}
  const char* kind() const noexcept override { return "dimension"; }
  std::size_t expected() const { return expected_; }
  std::size_t actual() const { return actual_; }

 private:
  std::size_t expected_;
  std::size_t actual_;
};

class ValidationError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "validation"; }
};

class NumericError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "numeric"; }
};

class StateError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "state"; }
};

// File-format failures. Each subclass is a distinct load failure mode.
class FormatError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "format"; }
};

class VersionError : public FormatError {
 public:
  using FormatError::FormatError;
  const char* kind() const noexcept override { return "version"; }
};

class TruncatedError : public FormatError {
 public:
  using FormatError::FormatError;
  const char* kind() const noexcept override { return "truncated"; }
};

class ChecksumError : public FormatError {
 public:
  using FormatError::FormatError;
  const char* kind() const noexcept override { return "checksum"; }
};

class ArtifactError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "artifact"; }
};

}  // namespace remav
