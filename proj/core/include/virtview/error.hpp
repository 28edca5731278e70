#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace virtview {

// Every failure the library reports maps to one of these. The CLI turns the
// category into an exit code (config=2, data=3, numeric=4).
enum class ErrorCode {
  AllPixelsInvalid,
  NonPositiveDepth,
  EmptyCloud,
  InvalidRange,
  UnknownSubset,
  ShapeMismatch,
  FrameMismatch,
  LengthMismatch,
  BadN,
  CenterBehindCamera,
  EmptyDataset,
  NonFiniteLoss,
  AnglesOutOfRange,
  InvalidArgument,
  ConfigError,
  IoError,
  FormatError,
};

enum class ErrorCategory { Config, Data, Numeric };

std::string_view to_string(ErrorCode code);
ErrorCategory category_of(ErrorCode code);
std::string_view to_string(ErrorCategory category);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& detail);

  ErrorCode code() const noexcept { return code_; }
  ErrorCategory category() const noexcept { return category_of(code_); }
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

}  // namespace virtview
