#include "loadcast/error.hpp"

namespace loadcast {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::DuplicateTimestamp: return "duplicate_timestamp";
    case ErrorCode::GapTooLarge: return "gap_too_large";
    case ErrorCode::NotFound: return "not_found";
    case ErrorCode::AlignmentError: return "alignment_error";
    case ErrorCode::ConflictError: return "conflict";
    case ErrorCode::ConfigError: return "config_error";
    case ErrorCode::ParseError: return "parse_error";
    case ErrorCode::ShapeError: return "shape_error";
    case ErrorCode::StateError: return "state_error";
    case ErrorCode::EmptyData: return "empty_data";
    case ErrorCode::InsufficientData: return "data_unavailable";
    case ErrorCode::VarianceError: return "variance_error";
    case ErrorCode::DivergenceError: return "divergence";
    case ErrorCode::DomainError: return "validation_error";
    case ErrorCode::SingularError: return "singular";
    case ErrorCode::RepositoryError: return "repository_error";
    case ErrorCode::NothingToLearn: return "nothing_to_learn";
    case ErrorCode::VersionError: return "version_error";
    case ErrorCode::Busy: return "busy";
    case ErrorCode::NoModel: return "no_model";
  }
  return "unknown";
}

}  // namespace loadcast
