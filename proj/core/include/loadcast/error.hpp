#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace loadcast {

enum class ErrorCode {
  DuplicateTimestamp,
  GapTooLarge,
  NotFound,
  AlignmentError,
  ConflictError,
  ConfigError,
  ParseError,
  ShapeError,
  StateError,
  EmptyData,
  InsufficientData,
  VarianceError,
  DivergenceError,
  DomainError,
  SingularError,
  RepositoryError,
  NothingToLearn,
  VersionError,
  Busy,
  NoModel,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

class DivergenceError : public Error {
 public:
  DivergenceError(int epoch, const std::string& message)
      : Error(ErrorCode::DivergenceError, message), epoch_(epoch) {}

  int epoch() const noexcept { return epoch_; }

 private:
  int epoch_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace loadcast
