#pragma once

#include <stdexcept>
#include <string>

namespace ovocc {

enum class ErrorCode {
  kShapeMismatch,
  kNonPositiveDepth,
  kIndexOutOfRange,
  kNonFiniteInput,
  kEmptyMask,
  kEmptyCoverage,
  kEmptyVisibleSet,
  kNoValidVoxels,
  kChannelsNotDivisible,
  kMissingForwardState,
  kUnknownClassName,
  kUnknownClass,
  kEmptyCandidateSet,
  kNoRelevantPoints,
  kBoxOutOfRange,
  kUnsupportedFormat,
  kInvalidArgument,
  kFormat,
  kIo,
  kConfig,
};

const char* error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + what),
        code_(code) {}
  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace ovocc
