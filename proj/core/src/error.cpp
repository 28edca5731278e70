#include "virtview/error.hpp"

namespace virtview {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::AllPixelsInvalid: return "AllPixelsInvalid";
    case ErrorCode::NonPositiveDepth: return "NonPositiveDepth";
    case ErrorCode::EmptyCloud: return "EmptyCloud";
    case ErrorCode::InvalidRange: return "InvalidRange";
    case ErrorCode::UnknownSubset: return "UnknownSubset";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::FrameMismatch: return "FrameMismatch";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::BadN: return "BadN";
    case ErrorCode::CenterBehindCamera: return "CenterBehindCamera";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::AnglesOutOfRange: return "AnglesOutOfRange";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::FormatError: return "FormatError";
  }
  return "Unknown";
}

ErrorCategory category_of(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidRange:
    case ErrorCode::UnknownSubset:
    case ErrorCode::BadN:
    case ErrorCode::InvalidArgument:
    case ErrorCode::ConfigError:
      return ErrorCategory::Config;
    case ErrorCode::NonFiniteLoss:
      return ErrorCategory::Numeric;
    default:
      return ErrorCategory::Data;
  }
}

std::string_view to_string(ErrorCategory category) {
  switch (category) {
    case ErrorCategory::Config: return "config";
    case ErrorCategory::Data: return "data";
    case ErrorCategory::Numeric: return "numeric";
  }
  return "unknown";
}

Error::Error(ErrorCode code, const std::string& detail)
    : std::runtime_error(std::string(to_string(code)) + ": " + detail),
      code_(code),
      detail_(detail) {}

}  // namespace virtview
