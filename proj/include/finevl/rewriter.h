#ifndef FINEVL_REWRITER_H_
#define FINEVL_REWRITER_H_

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "finevl/linguistics.h"
#include "finevl/wordnet.h"

namespace finevl {

enum class SearchOrder {
  kFirst,              // sibling under a shared hypernym
  kSecond,             // cousin under a shared grandparent
  kQuantifierLexicon,  // another entry of the quantifier lexicon
  kRandomWord,         // ablation: any lemma of the same part of speech
};

std::string_view SearchOrderName(SearchOrder order);

struct RewriteResult {
  std::vector<std::string> original_words;
  std::vector<std::string> rewritten_words;
  std::vector<bool> glued;  // joining info shared by both word lists
  size_t replaced_index = 0;
  PosTag tag = PosTag::kOther;
  std::string original_lemma;
  std::string substitute_lemma;
  std::string substitute_surface;
  SearchOrder search_order = SearchOrder::kFirst;
  uint64_t seed = 0;

  std::string original_text() const;
  std::string rewritten_text() const;
};

struct RewriteOptions {
  // Draw the substitute from every lemma of the word's part of speech
  // instead of its co-hyponyms.
  bool random_word = false;
};

// Replaces one candidate word of `text`. The candidate order and substitute
// are drawn from a generator seeded with `seed` only.
// Throws Error{kNoCandidate} when no word admits a substitute and
// Error{kEmptyInput} for blank text.
RewriteResult RewriteSentence(std::string_view text, const WordNetGraph& graph,
                              const QuantifierLexicon& quantifiers, uint64_t seed,
                              const RewriteOptions& options = {});

// Moves the inflection of `original_surface` onto `substitute_lemma`.
// Suffix transfer only; irregular forms come out regularized ("wolfs").
// When `original_lemma` is known, a noun or verb counts as inflected only if
// its surface differs from that lemma.
std::string RealizeSurface(std::string_view substitute_lemma, std::string_view original_surface,
                           PosTag tag, std::optional<std::string_view> original_lemma = std::nullopt);

}  // namespace finevl

#endif  // FINEVL_REWRITER_H_
