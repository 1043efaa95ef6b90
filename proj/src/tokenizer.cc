#include "finevl/tokenizer.h"

#include <cctype>
#include <fstream>

#include "finevl/error.h"
#include "finevl/rng.h"
#include "finevl/text.h"

namespace finevl {
namespace {

constexpr size_t kMaxCharsPerWord = 100;

// Splits a lowercased word into alphanumeric runs and single punctuation
// characters: "x-ray" -> {"x", "-", "ray"}.
std::vector<std::string> SplitPunct(std::string_view word) {
  std::vector<std::string> out;
  std::string run;
  for (char c : word) {
    if (IsPunct(c)) {
      if (!run.empty()) out.push_back(std::move(run));
      run.clear();
      out.emplace_back(1, c);
    } else {
      run.push_back(c);
    }
  }
  if (!run.empty()) out.push_back(std::move(run));
  return out;
}

// Greedy longest-prefix-first WordPiece. Returns {} when some suffix has no
// matching piece.
std::vector<int> WordPiece(std::string_view word, const Vocab& vocab) {
  if (word.size() > kMaxCharsPerWord) return {};
  std::vector<int> pieces;
  size_t start = 0;
  while (start < word.size()) {
    size_t end = word.size();
    std::optional<int> found;
    while (end > start) {
      std::string candidate(word.substr(start, end - start));
      if (start > 0) candidate.insert(0, "##");
      found = vocab.Find(candidate);
      if (found) break;
      --end;
    }
    if (!found) return {};
    pieces.push_back(*found);
    start = end;
  }
  return pieces;
}

}  // namespace

Vocab Vocab::Load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::kMissingFile, "cannot open vocab " + path.string());
  std::vector<std::string> tokens;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::string token = Trim(line);
    if (token.empty()) {
      throw Error(Errc::kMalformedLine, path.string() + ":" + std::to_string(line_no) + ": blank token");
    }
    tokens.push_back(std::move(token));
  }
  try {
    return FromTokens(std::move(tokens));
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

Vocab Vocab::FromTokens(std::vector<std::string> tokens) {
  Vocab v;
  v.id_to_token_ = std::move(tokens);
  for (size_t i = 0; i < v.id_to_token_.size(); ++i) {
    const std::string& t = v.id_to_token_[i];
    if (!v.token_to_id_.emplace(t, static_cast<int>(i)).second) {
      throw Error(Errc::kDuplicateToken,
                  "token \"" + t + "\" repeated at id " + std::to_string(i));
    }
  }
  auto special = [&](std::string_view name) {
    auto id = v.Find(name);
    if (!id) throw Error(Errc::kMissingSpecialToken, "vocab lacks " + std::string(name));
    return *id;
  };
  v.cls_id_ = special(kClsToken);
  v.sep_id_ = special(kSepToken);
  v.mask_id_ = special(kMaskToken);
  v.unk_id_ = special(kUnkToken);
  v.pad_id_ = special(kPadToken);
  for (int id = 0; id < static_cast<int>(v.size()); ++id) {
    if (!v.IsSpecial(id)) v.regular_ids_.push_back(id);
  }
  return v;
}

std::optional<int> Vocab::Find(std::string_view token) const {
  auto it = token_to_id_.find(std::string(token));
  if (it == token_to_id_.end()) return std::nullopt;
  return it->second;
}

const std::string& Vocab::Token(int id) const {
  if (id < 0 || static_cast<size_t>(id) >= size()) {
    throw Error(Errc::kInvalidArgument, "token id " + std::to_string(id) + " out of range");
  }
  return id_to_token_[static_cast<size_t>(id)];
}

bool Vocab::IsSpecial(int id) const {
  return id == cls_id_ || id == sep_id_ || id == mask_id_ || id == unk_id_ || id == pad_id_;
}

void Vocab::Save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::kMissingFile, "cannot write vocab " + path.string());
  for (const auto& t : id_to_token_) out << t << '\n';
}

std::optional<TokenSpan> TokenSeq::SpanOf(size_t word_index) const {
  if (word_index >= word_spans.size()) return std::nullopt;
  return word_spans[word_index];
}

TokenSeq Tokenize(std::string_view text, const Vocab& vocab, size_t max_length) {
  if (max_length < 3) throw Error(Errc::kInvalidArgument, "max_length must be at least 3");
  std::vector<Word> words = SegmentWords(text);
  if (words.empty()) throw Error(Errc::kEmptyInput, "cannot tokenize blank text");

  TokenSeq seq;
  seq.ids.push_back(vocab.cls_id());
  const size_t budget = max_length - 1;  // room left for [SEP]
  for (const Word& w : words) {
    std::vector<int> pieces;
    for (const std::string& part : SplitPunct(ToLower(w.text))) {
      std::vector<int> wp = WordPiece(part, vocab);
      if (wp.empty()) {
        // A word with any unmatched part collapses to a single [UNK].
        pieces = {vocab.unk_id()};
        break;
      }
      pieces.insert(pieces.end(), wp.begin(), wp.end());
    }
    if (seq.ids.size() >= budget) break;
    TokenSpan span{seq.ids.size(), seq.ids.size()};
    for (int id : pieces) {
      if (seq.ids.size() >= budget) break;
      seq.ids.push_back(id);
    }
    span.end = seq.ids.size();
    seq.word_spans.push_back(span);
  }
  seq.ids.push_back(vocab.sep_id());
  for (int id : seq.ids) seq.tokens.push_back(vocab.Token(id));
  return seq;
}

std::string Detokenize(const TokenSeq& seq) {
  std::string out;
  for (const std::string& t : seq.tokens) {
    if (t == kClsToken || t == kSepToken || t == kPadToken) continue;
    if (t.starts_with("##")) {
      out += t.substr(2);
    } else {
      if (!out.empty()) out.push_back(' ');
      out += t;
    }
  }
  return out;
}

MaskedSeq ApplyMlmMask(const TokenSeq& seq, std::optional<TokenSpan> forced_span, const Vocab& vocab,
                       uint64_t seed, const MaskOptions& options) {
  // Regular positions are [1, n - 1): everything between [CLS] and [SEP].
  const size_t n = seq.ids.size();
  if (n < 2) throw Error(Errc::kInvalidArgument, "token sequence lacks [CLS]/[SEP]");
  if (forced_span) {
    if (forced_span->start < 1 || forced_span->end > n - 1 || forced_span->start >= forced_span->end) {
      throw Error(Errc::kSpanOutOfRange,
                  "forced span [" + std::to_string(forced_span->start) + ", " +
                      std::to_string(forced_span->end) + ") outside regular positions [1, " +
                      std::to_string(n - 1) + ")");
    }
  }

  MaskedSeq out;
  out.ids = seq.ids;
  out.mlm_labels.assign(n, kIgnoreLabel);
  if (forced_span) out.forced_position = forced_span->start;

  Rng rng(seed);
  for (size_t i = 1; i + 1 < n; ++i) {
    // The selection draw happens for every position so forcing a span does
    // not shift the random stream of the others.
    bool selected = rng.Bernoulli(options.rate);
    if (forced_span && i >= forced_span->start && i < forced_span->end) selected = true;
    if (!selected) continue;
    out.mlm_labels[i] = seq.ids[i];
    double u = rng.Uniform();
    if (u < options.mask_prob) {
      out.ids[i] = vocab.mask_id();
    } else if (u < options.mask_prob + options.random_prob) {
      const auto& regular = vocab.regular_ids();
      if (!regular.empty()) out.ids[i] = regular[rng.Below(regular.size())];
    }
  }
  return out;
}

RlmTarget BuildRlmTarget(const TokenSeq& rewritten_seq, size_t replaced_word_index,
                         std::optional<size_t> length) {
  auto span = rewritten_seq.SpanOf(replaced_word_index);
  if (!span || span->size() == 0) {
    throw Error(Errc::kSpanTruncated,
                "word " + std::to_string(replaced_word_index) + " fell past the truncation point");
  }
  RlmTarget t;
  t.position = span->start;
  t.length = length.value_or(rewritten_seq.size());
  if (t.position >= t.length) {
    throw Error(Errc::kInvalidArgument, "target length " + std::to_string(t.length) +
                                            " does not cover position " + std::to_string(t.position));
  }
  return t;
}

}  // namespace finevl
