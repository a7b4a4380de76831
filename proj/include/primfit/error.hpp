#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace primfit {

/// Failure modes raised by the library. Each maps onto a CLI exit category.
enum class ErrorCode {
  InvalidArgument,
  PointAtInfinity,
  EmptyStroke,
  AllPointsAtInfinity,
  SingularSystem,
  DegenerateQuadric,
  NotAnEllipsoid,
  EmptyAfterTrim,
  DegeneratePoints,
  SingularBasis,
  CurveTooShort,
  GridTooSmall,
  DegenerateCamera,
  EmptyAfterFilter,
  ParseError,
  MissingImage,
  InvalidScript,
  UnknownArtifact,
  IOFailure,
  PortInUse,
};

enum class ErrorCategory { Parse, Numerical, IO, Usage };

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::PointAtInfinity: return "PointAtInfinity";
    case ErrorCode::EmptyStroke: return "EmptyStroke";
    case ErrorCode::AllPointsAtInfinity: return "AllPointsAtInfinity";
    case ErrorCode::SingularSystem: return "SingularSystem";
    case ErrorCode::DegenerateQuadric: return "DegenerateQuadric";
    case ErrorCode::NotAnEllipsoid: return "NotAnEllipsoid";
    case ErrorCode::EmptyAfterTrim: return "EmptyAfterTrim";
    case ErrorCode::DegeneratePoints: return "DegeneratePoints";
    case ErrorCode::SingularBasis: return "SingularBasis";
    case ErrorCode::CurveTooShort: return "CurveTooShort";
    case ErrorCode::GridTooSmall: return "GridTooSmall";
    case ErrorCode::DegenerateCamera: return "DegenerateCamera";
    case ErrorCode::EmptyAfterFilter: return "EmptyAfterFilter";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::MissingImage: return "MissingImage";
    case ErrorCode::InvalidScript: return "InvalidScript";
    case ErrorCode::UnknownArtifact: return "UnknownArtifact";
    case ErrorCode::IOFailure: return "IOFailure";
    case ErrorCode::PortInUse: return "PortInUse";
  }
  return "Unknown";
}

constexpr ErrorCategory category_of(ErrorCode code) {
  switch (code) {
    case ErrorCode::ParseError:
    case ErrorCode::InvalidScript:
      return ErrorCategory::Parse;
    case ErrorCode::IOFailure:
    case ErrorCode::MissingImage:
    case ErrorCode::PortInUse:
      return ErrorCategory::IO;
    case ErrorCode::InvalidArgument:
    case ErrorCode::UnknownArtifact:
      return ErrorCategory::Usage;
    default:
      return ErrorCategory::Numerical;
  }
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }
  ErrorCategory category() const noexcept { return category_of(code_); }

 protected:
  struct Verbatim {};
  Error(ErrorCode code, const std::string& what, Verbatim) : std::runtime_error(what), code_(code) {}

 private:
  ErrorCode code_;
};

/// An error raised while executing one action of a session script.
class ActionError : public Error {
 public:
  ActionError(std::size_t action_index, const Error& inner)
      : Error(inner.code(), "action " + std::to_string(action_index) + ": " + inner.what(), Verbatim{}),
        action_index_(action_index) {}

  std::size_t action_index() const noexcept { return action_index_; }

 private:
  std::size_t action_index_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

}  // namespace primfit
