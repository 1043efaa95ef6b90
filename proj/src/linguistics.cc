#include "finevl/linguistics.h"

#include <array>
#include <fstream>
#include <utility>

#include "finevl/error.h"
#include "finevl/text.h"

namespace finevl {
namespace {

constexpr const char* kQuantifiers[] = {
    "one", "two", "three", "four", "five", "six", "seven", "eight",
    "nine", "ten", "several", "few", "many", "some", "couple", "dozen",
};

constexpr const char* kFunctionWords[] = {
    // determiners
    "a", "an", "the", "this", "that", "these", "those", "each", "every", "either", "neither",
    "any", "all", "both", "no", "another", "such", "what", "which", "whose",
    // prepositions
    "about", "above", "across", "after", "against", "along", "among", "around", "at", "before",
    "behind", "below", "beneath", "beside", "besides", "between", "beyond", "by", "down",
    "during", "except", "for", "from", "in", "inside", "into", "like", "near", "of", "off",
    "on", "onto", "out", "outside", "over", "past", "since", "through", "throughout", "to",
    "toward", "towards", "under", "underneath", "until", "up", "upon", "with", "within",
    "without",
    // pronouns
    "i", "me", "my", "mine", "we", "us", "our", "ours", "you", "your", "yours", "he", "him",
    "his", "she", "her", "hers", "it", "its", "they", "them", "their", "theirs", "myself",
    "yourself", "himself", "herself", "itself", "ourselves", "themselves", "who", "whom",
    // conjunctions
    "and", "or", "but", "nor", "so", "yet", "because", "although", "though", "while", "if",
    "than", "as", "whether",
    // auxiliaries and particles
    "is", "are", "was", "were", "be", "been", "being", "am", "has", "have", "had", "having",
    "do", "does", "did", "can", "could", "will", "would", "shall", "should", "may", "might",
    "must", "not", "there", "here", "very", "too", "also", "just",
};

using Rule = std::pair<std::string_view, std::string_view>;

constexpr std::array<Rule, 8> kNounRules = {{
    {"s", ""}, {"ses", "s"}, {"xes", "x"}, {"zes", "z"},
    {"ches", "ch"}, {"shes", "sh"}, {"men", "man"}, {"ies", "y"},
}};
constexpr std::array<Rule, 8> kVerbRules = {{
    {"s", ""}, {"ies", "y"}, {"es", "e"}, {"es", ""},
    {"ed", "e"}, {"ed", ""}, {"ing", "e"}, {"ing", ""},
}};
constexpr std::array<Rule, 4> kAdjRules = {{{"er", ""}, {"est", ""}, {"r", ""}, {"st", ""}}};

bool IsVowel(char c) { return c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u'; }

template <size_t N>
std::optional<std::string> Detach(const std::string& word, const std::array<Rule, N>& rules,
                                  Pos pos, const WordNetGraph& graph, bool undouble) {
  for (const auto& [suffix, replacement] : rules) {
    if (word.size() <= suffix.size() || !word.ends_with(suffix)) continue;
    std::string stem = word.substr(0, word.size() - suffix.size());
    std::string candidate = stem + std::string(replacement);
    if (graph.Contains(candidate, pos)) return candidate;
    // running -> runn -> run, bigger -> bigg -> big
    if (undouble && replacement.empty() && (suffix == "ing" || suffix == "ed" || suffix == "er" || suffix == "est") && stem.size() >= 3 &&
        stem.back() == stem[stem.size() - 2] && !IsVowel(stem.back())) {
      std::string single = stem.substr(0, stem.size() - 1);
      if (graph.Contains(single, pos)) return single;
    }
  }
  return std::nullopt;
}

bool EndsWithAny(std::string_view word, std::initializer_list<std::string_view> suffixes) {
  for (auto s : suffixes) {
    if (word.size() > s.size() && word.ends_with(s)) return true;
  }
  return false;
}

}  // namespace

std::string_view PosTagName(PosTag tag) {
  switch (tag) {
    case PosTag::kNoun: return "NOUN";
    case PosTag::kVerb: return "VERB";
    case PosTag::kAdj: return "ADJ";
    case PosTag::kQuantifier: return "QUANT";
    case PosTag::kOther: return "OTHER";
  }
  return "OTHER";
}

std::optional<Pos> ToWordNetPos(PosTag tag) {
  switch (tag) {
    case PosTag::kNoun: return Pos::kNoun;
    case PosTag::kVerb: return Pos::kVerb;
    case PosTag::kAdj: return Pos::kAdj;
    default: return std::nullopt;
  }
}

Lexicon Lexicon::FromEntries(const std::vector<std::string>& entries) {
  Lexicon lex;
  for (const auto& raw : entries) {
    std::string e = ToLower(Trim(raw));
    if (e.empty() || e[0] == '#') continue;
    if (lex.set_.insert(e).second) lex.entries_.push_back(e);
  }
  return lex;
}

Lexicon Lexicon::Load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::kMissingFile, path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return FromEntries(lines);
}

const Lexicon& DefaultQuantifierLexicon() {
  static const Lexicon lex =
      Lexicon::FromEntries(std::vector<std::string>(std::begin(kQuantifiers), std::end(kQuantifiers)));
  return lex;
}

const Lexicon& DefaultFunctionWordLexicon() {
  static const Lexicon lex =
      Lexicon::FromEntries(std::vector<std::string>(std::begin(kFunctionWords), std::end(kFunctionWords)));
  return lex;
}

std::string Lemmatize(std::string_view surface, PosTag tag, const WordNetGraph& graph) {
  std::string word = ToLower(surface);
  auto pos = ToWordNetPos(tag);
  if (!pos || graph.Contains(word, *pos)) return word;
  std::optional<std::string> base;
  switch (*pos) {
    case Pos::kNoun: base = Detach(word, kNounRules, *pos, graph, false); break;
    case Pos::kVerb: base = Detach(word, kVerbRules, *pos, graph, true); break;
    case Pos::kAdj: base = Detach(word, kAdjRules, *pos, graph, true); break;
    case Pos::kAdv: break;
  }
  return base.value_or(word);
}

std::vector<TaggedWord> TagSentence(std::string_view text, const WordNetGraph& graph,
                                    const QuantifierLexicon& quantifiers,
                                    const Lexicon& function_words) {
  if (Trim(text).empty()) throw Error(Errc::kEmptyInput, "empty sentence");
  std::vector<Word> words = SegmentWords(text);
  std::vector<TaggedWord> out;
  out.reserve(words.size());
  for (size_t i = 0; i < words.size(); ++i) {
    TaggedWord w;
    w.surface = words[i].text;
    w.glued = words[i].glued;
    w.word_index = i;
    w.lemma = ToLower(w.surface);

    if (IsPunctWord(w.surface) || function_words.Contains(w.lemma)) {
      w.tag = quantifiers.Contains(w.lemma) ? PosTag::kQuantifier : PosTag::kOther;
    } else if (quantifiers.Contains(w.lemma)) {
      w.tag = PosTag::kQuantifier;
    } else {
      size_t best = 0;
      for (PosTag tag : {PosTag::kNoun, PosTag::kVerb, PosTag::kAdj}) {
        std::string lemma = Lemmatize(w.surface, tag, graph);
        size_t senses = graph.Lookup(lemma, *ToWordNetPos(tag)).size();
        if (senses > best) {
          best = senses;
          w.tag = tag;
          w.lemma = std::move(lemma);
        }
      }
      if (best == 0) {
        if (EndsWithAny(w.lemma, {"ing", "ed"})) {
          w.tag = PosTag::kVerb;
        } else if (EndsWithAny(w.lemma, {"ous", "ful", "ish"})) {
          w.tag = PosTag::kAdj;
        } else {
          w.tag = PosTag::kOther;
        }
      }
    }
    out.push_back(std::move(w));
  }
  return out;
}

bool IsConcreteNoun(std::string_view lemma, const WordNetGraph& graph) {
  const auto& roots = graph.Lookup("physical_entity", Pos::kNoun);
  if (roots.empty()) return false;
  for (SynsetId sense : graph.Lookup(lemma, Pos::kNoun)) {
    if (graph.HasAncestor(sense, roots.front())) return true;
  }
  return false;
}

std::vector<size_t> SelectRewriteCandidates(const std::vector<TaggedWord>& words,
                                            const WordNetGraph& graph,
                                            const QuantifierLexicon& quantifiers) {
  std::vector<size_t> out;
  for (const TaggedWord& w : words) {
    if (w.tag == PosTag::kQuantifier) {
      if (quantifiers.size() >= 2) out.push_back(w.word_index);
      continue;
    }
    auto pos = ToWordNetPos(w.tag);
    if (!pos) continue;
    if (w.tag == PosTag::kNoun && !IsConcreteNoun(w.lemma, graph)) continue;
    if (!graph.CoHyponymCandidates(w.lemma, *pos, 1).empty() ||
        !graph.CoHyponymCandidates(w.lemma, *pos, 2).empty()) {
      out.push_back(w.word_index);
    }
  }
  return out;
}

}  // namespace finevl
