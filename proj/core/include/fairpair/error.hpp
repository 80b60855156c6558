#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace fairpair {

enum class ErrorCode {
  kInvalidArgument,
  kMissingFile,
  kEmptyOccupationList,
  kUnfilledSlot,
  kNameCollision,
  kIdenticalEntities,
  kEmptyInput,
  kInsufficientSamples,
  kDegenerateVariance,
  kUnknownEntity,
  kBackendUnreachable,
  kReplayMissingPrompt,
  kPartialBatch,
  kStageSealed,
  kKeyCollision,
  kManifestCorrupted,
  kStageDependency,
  kConfig,
};

std::string_view to_string(ErrorCode code) noexcept;

// Every failure raised by the library carries one of the codes above so that
// callers (the CLI in particular) can map it to an exit status.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kMissingFile: return "MissingFile";
    case ErrorCode::kEmptyOccupationList: return "EmptyOccupationList";
    case ErrorCode::kUnfilledSlot: return "UnfilledSlot";
    case ErrorCode::kNameCollision: return "NameCollision";
    case ErrorCode::kIdenticalEntities: return "IdenticalEntities";
    case ErrorCode::kEmptyInput: return "EmptyInput";
    case ErrorCode::kInsufficientSamples: return "InsufficientSamples";
    case ErrorCode::kDegenerateVariance: return "DegenerateVariance";
    case ErrorCode::kUnknownEntity: return "UnknownEntity";
    case ErrorCode::kBackendUnreachable: return "BackendUnreachable";
    case ErrorCode::kReplayMissingPrompt: return "ReplayMissingPrompt";
    case ErrorCode::kPartialBatch: return "PartialBatch";
    case ErrorCode::kStageSealed: return "StageSealed";
    case ErrorCode::kKeyCollision: return "KeyCollision";
    case ErrorCode::kManifestCorrupted: return "ManifestCorrupted";
    case ErrorCode::kStageDependency: return "StageDependency";
    case ErrorCode::kConfig: return "ConfigError";
  }
  return "Unknown";
}

}  // namespace fairpair
