#pragma once

#include <stdexcept>
#include <string>

namespace popgrid {

enum class ErrorCode {
  kParse = 1,
  kDimension,
  kIo,
  kFormat,
  kUnsupported,
  kCoregistration,
  kAlignment,
  kBounds,
  kEdgeSkip,
  kArgument,
  kDomain,
  kShape,
  kProtocol,
  kPoisonedUpdate,
  kDivergence,
  kUndefinedMetric,
  kEmptySplit,
  kUsage,
  kInternal,
};

const char* to_string(ErrorCode code);

// Every failure in the library surfaces as this type; the code identifies the
// error class and the message carries the detail (file, line, index...).
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace popgrid
