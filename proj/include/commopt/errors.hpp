#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace commopt {

// Base of every error the library throws on purpose.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Precondition violation on an argument (out-of-range k, bad dimension, ...).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// LibSVM / trace / config text that does not follow the expected grammar.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// Experiment configuration rejected; carries the dotted path of the field.
class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& what)
      : Error(field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

// Scaling parameters for which the compression error factor r is not < 1.
class RateError : public Error {
 public:
  using Error::Error;
};

// Exhaustive enumeration requested beyond the combinatorial guard.
class EnumerationLimit : public Error {
 public:
  using Error::Error;
};

// Trace file lacks a required column or has a malformed header.
class SchemaError : public Error {
 public:
  using Error::Error;
};

// Trace written by an incompatible format version.
class VersionError : public Error {
 public:
  using Error::Error;
};

// Iterates blew up, or an iterative solver did not converge in its budget.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace commopt
