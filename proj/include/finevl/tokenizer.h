#ifndef FINEVL_TOKENIZER_H_
#define FINEVL_TOKENIZER_H_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace finevl {

inline constexpr std::string_view kClsToken = "[CLS]";
inline constexpr std::string_view kSepToken = "[SEP]";
inline constexpr std::string_view kMaskToken = "[MASK]";
inline constexpr std::string_view kUnkToken = "[UNK]";
inline constexpr std::string_view kPadToken = "[PAD]";

inline constexpr int kIgnoreLabel = -100;
inline constexpr size_t kDefaultMaxLength = 30;

// BERT-style vocabulary: the line number of a token is its id.
class Vocab {
 public:
  // Throws Error{kMissingFile, kDuplicateToken, kMissingSpecialToken,
  // kMalformedLine}.
  static Vocab Load(const std::filesystem::path& path);
  static Vocab FromTokens(std::vector<std::string> tokens);

  size_t size() const { return id_to_token_.size(); }
  std::optional<int> Find(std::string_view token) const;
  bool Contains(std::string_view token) const { return Find(token).has_value(); }
  // Throws Error{kInvalidArgument} for ids outside [0, size()).
  const std::string& Token(int id) const;
  const std::vector<std::string>& tokens() const { return id_to_token_; }

  bool IsSpecial(int id) const;
  // Ids of every token that is not one of the five special tokens.
  const std::vector<int>& regular_ids() const { return regular_ids_; }

  int cls_id() const { return cls_id_; }
  int sep_id() const { return sep_id_; }
  int mask_id() const { return mask_id_; }
  int unk_id() const { return unk_id_; }
  int pad_id() const { return pad_id_; }

  // Writes one token per line.
  void Save(const std::filesystem::path& path) const;

 private:
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, int> token_to_id_;
  std::vector<int> regular_ids_;
  int cls_id_ = -1;
  int sep_id_ = -1;
  int mask_id_ = -1;
  int unk_id_ = -1;
  int pad_id_ = -1;
};

// Half-open token range [start, end).
struct TokenSpan {
  size_t start = 0;
  size_t end = 0;
  size_t size() const { return end - start; }
  bool operator==(const TokenSpan&) const = default;
};

struct TokenSeq {
  std::vector<int> ids;
  std::vector<std::string> tokens;
  // Indexed by word index as produced by SegmentWords; words cut off by
  // truncation are absent, a word cut in the middle keeps its leading
  // pieces.
  std::vector<TokenSpan> word_spans;

  size_t size() const { return ids.size(); }
  std::optional<TokenSpan> SpanOf(size_t word_index) const;
};

struct MaskedSeq {
  std::vector<int> ids;
  std::vector<int> mlm_labels;  // original id where selected, else kIgnoreLabel
  std::optional<size_t> forced_position;
};

struct RlmTarget {
  size_t position = 0;
  size_t length = 0;
};

struct MaskOptions {
  double rate = 0.15;
  double mask_prob = 0.8;
  double random_prob = 0.1;
};

// Lowercases, splits punctuation, and runs greedy longest-match WordPiece
// per word. Words that cannot be fully matched become one [UNK]. The result
// is wrapped in [CLS] ... [SEP] and holds at most `max_length` ids.
// Throws Error{kEmptyInput} for blank text and Error{kInvalidArgument} when
// max_length < 3.
TokenSeq Tokenize(std::string_view text, const Vocab& vocab, size_t max_length = kDefaultMaxLength);

// Joins pieces back into text: "##" pieces attach to the previous piece,
// everything else is space separated. Special tokens are dropped.
std::string Detokenize(const TokenSeq& seq);

// Selects each non-special position with probability `rate`, plus every
// position of `forced_span`, and corrupts each selected position as [MASK],
// a random regular token, or itself. Deterministic in `seed`.
// Throws Error{kSpanOutOfRange} if the span is empty or touches [CLS]/[SEP].
MaskedSeq ApplyMlmMask(const TokenSeq& seq, std::optional<TokenSpan> forced_span, const Vocab& vocab,
                       uint64_t seed, const MaskOptions& options = {});

// One-hot RLM target on the first piece of the replaced word. `length`
// defaults to the sequence length.
// Throws Error{kSpanTruncated} when the word did not survive truncation.
RlmTarget BuildRlmTarget(const TokenSeq& rewritten_seq, size_t replaced_word_index,
                         std::optional<size_t> length = std::nullopt);

}  // namespace finevl

#endif  // FINEVL_TOKENIZER_H_
