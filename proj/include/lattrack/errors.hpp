#pragma once

#include <stdexcept>
#include <string>

namespace lattrack {

enum class ErrorKind {
  Config,
  Shape,
  Data,
  Range,
  Numeric,
  Io,
  Consistency,
};

const char* to_string(ErrorKind kind);

/// Base exception for every failure raised by the library. The kind decides
/// the CLI exit status (validation vs runtime failure).
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + " error: " + what), kind_(kind), message_(what) {}

  ErrorKind kind() const noexcept { return kind_; }
  /// The message without the kind prefix.
  const std::string& message() const noexcept { return message_; }

  /// True for errors caused by bad input (config, shapes, data, ranges).
  bool is_validation() const noexcept {
    return kind_ == ErrorKind::Config || kind_ == ErrorKind::Shape || kind_ == ErrorKind::Data ||
           kind_ == ErrorKind::Range;
  }

 private:
  ErrorKind kind_;
  std::string message_;
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Config: return "configuration";
    case ErrorKind::Shape: return "shape";
    case ErrorKind::Data: return "data";
    case ErrorKind::Range: return "range";
    case ErrorKind::Numeric: return "numeric";
    case ErrorKind::Io: return "I/O";
    case ErrorKind::Consistency: return "internal consistency";
  }
  return "unknown";
}

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) fail(kind, what);
}

}  // namespace lattrack
