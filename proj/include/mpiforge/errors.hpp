#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mpiforge {

enum class ErrorCode {
  InvalidArgument,
  InvalidCamera,
  DegeneratePlane,
  InvalidRange,
  OutOfRange,
  MismatchedLayerCount,
  MismatchedDims,
  SizeMismatch,
  NonFiniteLoss,
  NeverVisible,
  SchemaError,
  MissingFile,
  BadMagic,
  VersionUnsupported,
  TruncatedPayload,
  CorruptPayload,
  BadPath,
  IoError,
};

constexpr std::string_view error_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::InvalidCamera: return "InvalidCamera";
    case ErrorCode::DegeneratePlane: return "DegeneratePlane";
    case ErrorCode::InvalidRange: return "InvalidRange";
    case ErrorCode::OutOfRange: return "OutOfRange";
    case ErrorCode::MismatchedLayerCount: return "MismatchedLayerCount";
    case ErrorCode::MismatchedDims: return "MismatchedDims";
    case ErrorCode::SizeMismatch: return "SizeMismatch";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::NeverVisible: return "NeverVisible";
    case ErrorCode::SchemaError: return "SchemaError";
    case ErrorCode::MissingFile: return "MissingFile";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::VersionUnsupported: return "VersionUnsupported";
    case ErrorCode::TruncatedPayload: return "TruncatedPayload";
    case ErrorCode::CorruptPayload: return "CorruptPayload";
    case ErrorCode::BadPath: return "BadPath";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

/// Every failure raised by the library carries a machine-readable category.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& detail)
      : std::runtime_error(std::string(error_name(code)) + ": " + detail),
        code_(code),
        detail_(detail) {}

  ErrorCode code() const noexcept { return code_; }
  std::string_view category() const noexcept { return error_name(code_); }
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

}  // namespace mpiforge
