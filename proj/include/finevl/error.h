#ifndef FINEVL_ERROR_H_
#define FINEVL_ERROR_H_

#include <stdexcept>
#include <string>
#include <string_view>

namespace finevl {

enum class Errc {
  kMissingFile,
  kParseError,
  kUnknownSynset,
  kEmptyInput,
  kNoCandidate,
  kMissingSpecialToken,
  kDuplicateToken,
  kSpanOutOfRange,
  kSpanTruncated,
  kDimensionMismatch,
  kNonNormalizedInput,
  kNoValidTokens,
  kBatchTooSmall,
  kNoMaskedPositions,
  kInvalidTarget,
  kShapeMismatch,
  kVocabMismatch,
  kMalformedLine,
  kInvalidArgument,
};

std::string_view ErrcName(Errc code);

// All library failures surface as this exception; callers branch on code().
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(std::string(ErrcName(code)) + ": " + message),
        code_(code) {}

  Errc code() const { return code_; }

  // Data errors map to CLI exit code 2, everything else is treated the same.
  bool is_data_error() const { return code_ != Errc::kInvalidArgument; }

 private:
  Errc code_;
};

}  // namespace finevl

#endif  // FINEVL_ERROR_H_
