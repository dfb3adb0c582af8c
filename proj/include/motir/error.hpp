#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace motir {

/// Coarse failure classes; the CLI prints the class name as a machine-parseable prefix.
enum class ErrorKind {
  InvalidArgument,
  ShapeMismatch,
  OutOfRange,
  NonFinite,
  Io,
  Format,
  State,
};

inline std::string_view to_string(ErrorKind k) {
  switch (k) {
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::OutOfRange: return "OutOfRange";
    case ErrorKind::NonFinite: return "NonFinite";
    case ErrorKind::Io: return "IoError";
    case ErrorKind::Format: return "FormatError";
    case ErrorKind::State: return "StateError";
  }
  return "Error";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) fail(kind, what);
}

}  // namespace motir
