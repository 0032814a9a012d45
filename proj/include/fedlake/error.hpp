#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace fedlake {

/// Base of every error the library raises. `code()` is a stable,
/// machine-readable identifier surfaced in HTTP and CLI error payloads.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(message), code_(std::move(code)) {}

  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

/// Query text problems, positioned at 1-based line/column.
class ParseError : public Error {
 public:
  ParseError(std::string code, const std::string& message, std::size_t line,
             std::size_t column)
      : Error(std::move(code), message + " at line " + std::to_string(line) +
                                   ", column " + std::to_string(column)),
        line_(line),
        column_(column) {}

  std::size_t line() const noexcept { return line_; }
  std::size_t column() const noexcept { return column_; }

 private:
  std::size_t line_;
  std::size_t column_;
};

/// Documents and inputs that are well-formed but violate an invariant.
class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& message,
                           std::string code = "validation_error")
      : Error(std::move(code), message) {}
};

/// A filter references an attribute the node does not map.
class UncoveredAttributeError : public Error {
 public:
  explicit UncoveredAttributeError(const std::string& attribute)
      : Error("uncovered_attribute", "attribute not covered: " + attribute),
        attribute_(attribute) {}

  const std::string& attribute() const noexcept { return attribute_; }

 private:
  std::string attribute_;
};

/// The federation could not produce an answer (no nodes, no model, aborted).
class FederationError : public Error {
 public:
  explicit FederationError(const std::string& message,
                           std::string code = "federation_error")
      : Error(std::move(code), message) {}
};

/// A training session for the pattern is already running.
class BusyError : public Error {
 public:
  explicit BusyError(const std::string& message) : Error("busy", message) {}
};

class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& message)
      : Error("numerical_error", message) {}
};

}  // namespace fedlake
