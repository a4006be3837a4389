#pragma once

#include <stdexcept>
#include <string>

namespace st {

enum class ErrorKind {
  dimension,
  config,
  data,
  numeric,
  usage,
  corruption,
  internal,
};

inline const char* to_string(ErrorKind k) {
  switch (k) {
    case ErrorKind::dimension: return "dimension error";
    case ErrorKind::config: return "config error";
    case ErrorKind::data: return "data error";
    case ErrorKind::numeric: return "numeric error";
    case ErrorKind::usage: return "usage error";
    case ErrorKind::corruption: return "corruption error";
    case ErrorKind::internal: return "internal error";
  }
  return "error";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& w) : Error(ErrorKind::dimension, w) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& w) : Error(ErrorKind::config, w) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& w) : Error(ErrorKind::data, w) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& w) : Error(ErrorKind::numeric, w) {}
};

class UsageError : public Error {
 public:
  explicit UsageError(const std::string& w) : Error(ErrorKind::usage, w) {}
};

class CorruptionError : public Error {
 public:
  explicit CorruptionError(const std::string& w) : Error(ErrorKind::corruption, w) {}
};

// CLI exit codes: 0 ok, 1 usage/config, 2 data, 3 numeric failure.
inline int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::usage:
    case ErrorKind::config: return 1;
    case ErrorKind::data:
    case ErrorKind::corruption:
    case ErrorKind::dimension: return 2;
    case ErrorKind::numeric: return 3;
    case ErrorKind::internal: return 3;
  }
  return 1;
}

}  // namespace st
