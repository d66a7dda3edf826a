#pragma once

#include <stdexcept>
#include <string>

namespace fpba {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed tensors, shape mismatches, non-finite values.
class InvalidInput : public Error {
 public:
  using Error::Error;
};

class InvalidParameter : public Error {
 public:
  using Error::Error;
};

// The model cannot provide what was asked of it (e.g. input gradients).
class CapabilityError : public Error {
 public:
  using Error::Error;
};

class InvalidDataset : public Error {
 public:
  using Error::Error;
};

class PreconditionError : public Error {
 public:
  using Error::Error;
};

// A file could not be found, read or written.
class IoError : public Error {
 public:
  using Error::Error;
};

// A container or manifest exists but does not validate.
class FormatError : public Error {
 public:
  using Error::Error;
};

// A numerical procedure produced non-finite values.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, std::string diagnostics)
      : Error(what), diagnostics_(std::move(diagnostics)) {}
  const std::string& diagnostics() const noexcept { return diagnostics_; }

 private:
  std::string diagnostics_;
};

}  // namespace fpba
