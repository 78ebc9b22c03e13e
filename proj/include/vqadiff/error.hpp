#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace vqadiff {

enum class ErrorCode {
  invalid_argument,
  degenerate_geometry,
  io,
  manifest_write,
  backend_unavailable,
  timeout,
  backend_error,
  empty_answer,
  incomplete_instance,
  training_failed,
  generation,
  export_failed,
  numerical_failure,
  validation,
  config,
};

std::string_view to_string(ErrorCode code);

// Single exception type for the library; callers branch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// Raised by HTTP clients when a service answers with a 5xx status.
class BackendError : public Error {
 public:
  BackendError(const std::string& what, int status, int attempts)
      : Error(ErrorCode::backend_error, what), status_(status), attempts_(attempts) {}

  int status() const noexcept { return status_; }
  int attempts() const noexcept { return attempts_; }

 private:
  int status_;
  int attempts_;
};

// Wraps an error with the pipeline stage that raised it ("structure.anchor", "metric.fid", ...).
class StageError : public Error {
 public:
  StageError(std::string stage, const Error& cause)
      : Error(cause.code(), stage + ": " + cause.what()), stage_(std::move(stage)) {}

  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) throw Error(code, what);
}

}  // namespace vqadiff
