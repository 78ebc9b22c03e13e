#include "vqadiff/error.hpp"

namespace vqadiff {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_argument: return "invalid-argument";
    case ErrorCode::degenerate_geometry: return "degenerate-geometry";
    case ErrorCode::io: return "io";
    case ErrorCode::manifest_write: return "manifest-write";
    case ErrorCode::backend_unavailable: return "backend-unavailable";
    case ErrorCode::timeout: return "timeout";
    case ErrorCode::backend_error: return "backend-error";
    case ErrorCode::empty_answer: return "empty-answer";
    case ErrorCode::incomplete_instance: return "incomplete-instance";
    case ErrorCode::training_failed: return "training-failed";
    case ErrorCode::generation: return "generation";
    case ErrorCode::export_failed: return "export";
    case ErrorCode::numerical_failure: return "numerical-failure";
    case ErrorCode::validation: return "validation";
    case ErrorCode::config: return "config";
  }
  return "unknown";
}

}  // namespace vqadiff
