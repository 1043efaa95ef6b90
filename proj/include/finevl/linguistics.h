#ifndef FINEVL_LINGUISTICS_H_
#define FINEVL_LINGUISTICS_H_

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "finevl/wordnet.h"

namespace finevl {

enum class PosTag { kNoun, kVerb, kAdj, kQuantifier, kOther };

std::string_view PosTagName(PosTag tag);
std::optional<Pos> ToWordNetPos(PosTag tag);

struct TaggedWord {
  std::string surface;
  std::string lemma;
  PosTag tag = PosTag::kOther;
  size_t word_index = 0;
  bool glued = false;  // see Word::glued
};

// Ordered, lowercase, deduplicated word list loaded from a one-entry-per-line
// resource file.
class Lexicon {
 public:
  Lexicon() = default;
  static Lexicon FromEntries(const std::vector<std::string>& entries);
  static Lexicon Load(const std::filesystem::path& path);

  bool Contains(std::string_view word) const { return set_.contains(std::string(word)); }
  const std::vector<std::string>& entries() const { return entries_; }
  size_t size() const { return entries_.size(); }

 private:
  std::vector<std::string> entries_;
  std::unordered_set<std::string> set_;
};

using QuantifierLexicon = Lexicon;

// Number words one..ten plus vague quantifiers. "a"/"an" are not included.
const Lexicon& DefaultQuantifierLexicon();
// Determiners, prepositions, pronouns, conjunctions and auxiliaries.
const Lexicon& DefaultFunctionWordLexicon();

// WordNet-style morphological detachment. Returns the first candidate base
// form present in `graph` for `tag`, else the lowercased surface.
std::string Lemmatize(std::string_view surface, PosTag tag, const WordNetGraph& graph);

// Rule-based tagger: quantifier lexicon, then function words, then the
// WordNet part of speech with the most senses (ties Noun > Verb > Adj), then
// suffix heuristics for out-of-vocabulary words.
// Throws Error{kEmptyInput} for blank text.
std::vector<TaggedWord> TagSentence(std::string_view text, const WordNetGraph& graph,
                                    const QuantifierLexicon& quantifiers,
                                    const Lexicon& function_words = DefaultFunctionWordLexicon());

// A noun is concrete when one of its senses descends from physical_entity.
bool IsConcreteNoun(std::string_view lemma, const WordNetGraph& graph);

// Word indices that admit at least one substitute.
std::vector<size_t> SelectRewriteCandidates(const std::vector<TaggedWord>& words,
                                            const WordNetGraph& graph,
                                            const QuantifierLexicon& quantifiers);

}  // namespace finevl

#endif  // FINEVL_LINGUISTICS_H_
