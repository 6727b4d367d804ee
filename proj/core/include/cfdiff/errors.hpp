// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cfdiff {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A caller violated a documented precondition (bad shapes, bad ranges, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public ContractError {
 public:
  using ContractError::ContractError;
};

/// NaN/Inf produced or a guarded division hit its floor.
class NumericError : public ContractError {
 public:
  using ContractError::ContractError;
};

/// Malformed textual input. Carries the 1-based line number.
class ParseError : public ContractError {
 public:
  ParseError(std::size_t line, const std::string& what)
      : ContractError("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class EmptyInputError : public ContractError {
 public:
  using ContractError::ContractError;
};

/// Filesystem failures and corrupt binary files.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace cfdiff
