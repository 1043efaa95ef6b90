#include "finevl/error.h"

namespace finevl {

std::string_view ErrcName(Errc code) {
  switch (code) {
    case Errc::kMissingFile: return "MissingFile";
    case Errc::kParseError: return "ParseError";
    case Errc::kUnknownSynset: return "UnknownSynset";
    case Errc::kEmptyInput: return "EmptyInput";
    case Errc::kNoCandidate: return "NoCandidate";
    case Errc::kMissingSpecialToken: return "MissingSpecialToken";
    case Errc::kDuplicateToken: return "DuplicateToken";
    case Errc::kSpanOutOfRange: return "SpanOutOfRange";
    case Errc::kSpanTruncated: return "SpanTruncated";
    case Errc::kDimensionMismatch: return "DimensionMismatch";
    case Errc::kNonNormalizedInput: return "NonNormalizedInput";
    case Errc::kNoValidTokens: return "NoValidTokens";
    case Errc::kBatchTooSmall: return "BatchTooSmall";
    case Errc::kNoMaskedPositions: return "NoMaskedPositions";
    case Errc::kInvalidTarget: return "InvalidTarget";
    case Errc::kShapeMismatch: return "ShapeMismatch";
    case Errc::kVocabMismatch: return "VocabMismatch";
    case Errc::kMalformedLine: return "MalformedLine";
    case Errc::kInvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

}  // namespace finevl
