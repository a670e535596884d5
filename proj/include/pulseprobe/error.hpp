#pragma once

#include <stdexcept>
#include <string>

namespace pulseprobe {

enum class ErrorKind {
  InvalidField,
  Shape,
  Geometry,
  Range,
  Plan,
  OutOfField,
  NoMatch,
  Rank,
  Numeric,
  Input,
  Config,
  Io,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidField: return "invalid-field";
    case ErrorKind::Shape: return "shape";
    case ErrorKind::Geometry: return "geometry";
    case ErrorKind::Range: return "range";
    case ErrorKind::Plan: return "plan";
    case ErrorKind::OutOfField: return "out-of-field";
    case ErrorKind::NoMatch: return "no-match";
    case ErrorKind::Rank: return "rank";
    case ErrorKind::Numeric: return "numeric";
    case ErrorKind::Input: return "input";
    case ErrorKind::Config: return "config";
    case ErrorKind::Io: return "io";
  }
  return "unknown";
}

/// Single exception type for the library; `kind()` drives CLI exit codes.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// 0 ok, 2 config, 3 I/O or bad input, 4 numeric/stage failure.
inline int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Config: return 2;
    case ErrorKind::Io:
    case ErrorKind::Input: return 3;
    default: return 4;
  }
}

}  // namespace pulseprobe
