#include "popgrid/error.hpp"

namespace popgrid {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kParse: return "parse error";
    case ErrorCode::kDimension: return "dimension error";
    case ErrorCode::kIo: return "I/O error";
    case ErrorCode::kFormat: return "format error";
    case ErrorCode::kUnsupported: return "unsupported stack";
    case ErrorCode::kCoregistration: return "co-registration error";
    case ErrorCode::kAlignment: return "alignment error";
    case ErrorCode::kBounds: return "bounds error";
    case ErrorCode::kEdgeSkip: return "edge skip";
    case ErrorCode::kArgument: return "argument error";
    case ErrorCode::kDomain: return "domain error";
    case ErrorCode::kShape: return "shape error";
    case ErrorCode::kProtocol: return "protocol error";
    case ErrorCode::kPoisonedUpdate: return "poisoned update";
    case ErrorCode::kDivergence: return "divergence";
    case ErrorCode::kUndefinedMetric: return "undefined metric";
    case ErrorCode::kEmptySplit: return "empty split";
    case ErrorCode::kUsage: return "usage error";
    case ErrorCode::kInternal: return "internal error";
  }
  return "unknown error";
}

}  // namespace popgrid
