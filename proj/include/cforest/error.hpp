#pragma once

#include <stdexcept>
#include <string>

namespace cforest {

/// Broad failure category. The CLI maps these onto exit codes.
enum class ErrorKind {
  Config,     // malformed config or invalid user-supplied parameter
  Data,       // missing column, parse failure, invalid values
  Numerical,  // degenerate estimator or inference failure
  Io,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& what) : Error(ErrorKind::Config, what) {}
};

struct ParameterError : Error {
  explicit ParameterError(const std::string& what) : Error(ErrorKind::Config, "parameter error: " + what) {}
};

struct SchemaError : Error {
  explicit SchemaError(const std::string& what) : Error(ErrorKind::Data, "schema error: " + what) {}
};

struct ParseError : Error {
  ParseError(const std::string& what, long row)
      : Error(ErrorKind::Data, "parse error at row " + std::to_string(row) + ": " + what), row_(row) {}
  long row() const noexcept { return row_; }

 private:
  long row_;
};

struct ValidationError : Error {
  explicit ValidationError(const std::string& what) : Error(ErrorKind::Data, "validation error: " + what) {}
};

struct NumericalError : Error {
  explicit NumericalError(const std::string& what) : Error(ErrorKind::Numerical, what) {}
};

struct IoError : Error {
  explicit IoError(const std::string& what) : Error(ErrorKind::Io, "I/O error: " + what) {}
};

}  // namespace cforest
