#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace tinybox {

enum class ErrorKind {
  InvalidArgument,
  EmptyBatch,
  LengthMismatch,
  ZeroFilter,
  ShapeMismatch,
  NonMonotoneEpoch,
  EmptyGroundTruth,
  MalformedLine,
  NonPositiveSize,
  DivergenceDetected,
  IoFailure,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::EmptyBatch: return "EmptyBatch";
    case ErrorKind::LengthMismatch: return "LengthMismatch";
    case ErrorKind::ZeroFilter: return "ZeroFilter";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::NonMonotoneEpoch: return "NonMonotoneEpoch";
    case ErrorKind::EmptyGroundTruth: return "EmptyGroundTruth";
    case ErrorKind::MalformedLine: return "MalformedLine";
    case ErrorKind::NonPositiveSize: return "NonPositiveSize";
    case ErrorKind::DivergenceDetected: return "DivergenceDetected";
    case ErrorKind::IoFailure: return "IoFailure";
  }
  return "Unknown";
}

// Every failure in the library surfaces as an Error carrying its kind; callers
// that need to branch (the CLI maps kinds to exit codes) inspect kind().
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

// Parse failure pinned to a 1-based physical line number.
class MalformedLineError : public Error {
 public:
  MalformedLineError(std::size_t line_no, const std::string& content)
      : Error(ErrorKind::MalformedLine,
              "line " + std::to_string(line_no) + ": '" + content + "'"),
        line_no_(line_no), content_(content) {}

  std::size_t line_no() const noexcept { return line_no_; }
  const std::string& content() const noexcept { return content_; }

 private:
  std::size_t line_no_;
  std::string content_;
};

namespace detail {
inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) throw Error(kind, what);
}
}  // namespace detail

}  // namespace tinybox
