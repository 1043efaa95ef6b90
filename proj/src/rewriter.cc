#include "finevl/rewriter.h"

#include <cctype>

#include "finevl/error.h"
#include "finevl/rng.h"
#include "finevl/text.h"

namespace finevl {
namespace {

bool IsVowel(char c) { return c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u'; }

// Short consonant-vowel-consonant stems double their final consonant:
// run -> running, stop -> stopped.
bool DoublesFinalConsonant(std::string_view w) {
  if (w.size() < 3 || w.size() > 4) return false;
  char c1 = w[w.size() - 3];
  char v = w[w.size() - 2];
  char c2 = w.back();
  return !IsVowel(c1) && IsVowel(v) && !IsVowel(c2) && c2 != 'w' && c2 != 'x' && c2 != 'y';
}

std::string AddS(std::string_view w) {
  std::string s(w);
  if (s.size() >= 2 && s.back() == 'y' && !IsVowel(s[s.size() - 2])) {
    s.pop_back();
    return s + "ies";
  }
  if (s.ends_with("s") || s.ends_with("x") || s.ends_with("z") || s.ends_with("ch") ||
      s.ends_with("sh")) {
    return s + "es";
  }
  return s + "s";
}

std::string AddIng(std::string_view w) {
  std::string s(w);
  if (s.size() > 2 && s.back() == 'e' && !s.ends_with("ee") && !s.ends_with("ye") &&
      !s.ends_with("oe")) {
    s.pop_back();
  } else if (DoublesFinalConsonant(s)) {
    s.push_back(s.back());
  }
  return s + "ing";
}

std::string AddEd(std::string_view w) {
  std::string s(w);
  if (s.back() == 'e') return s + "d";
  if (s.size() >= 2 && s.back() == 'y' && !IsVowel(s[s.size() - 2])) {
    s.pop_back();
    return s + "ied";
  }
  if (DoublesFinalConsonant(s)) s.push_back(s.back());
  return s + "ed";
}

std::vector<std::string> QuantifierSubstitutes(const QuantifierLexicon& lex, std::string_view original) {
  std::vector<std::string> out;
  for (const auto& e : lex.entries()) {
    if (e != original) out.push_back(e);
  }
  return out;
}

}  // namespace

std::string_view SearchOrderName(SearchOrder order) {
  switch (order) {
    case SearchOrder::kFirst: return "first";
    case SearchOrder::kSecond: return "second";
    case SearchOrder::kQuantifierLexicon: return "quantifier";
    case SearchOrder::kRandomWord: return "random";
  }
  return "";
}

std::string RewriteResult::original_text() const {
  std::vector<Word> words;
  for (size_t i = 0; i < original_words.size(); ++i) words.push_back({original_words[i], glued[i]});
  return JoinWords(words);
}

std::string RewriteResult::rewritten_text() const {
  std::vector<Word> words;
  for (size_t i = 0; i < rewritten_words.size(); ++i) words.push_back({rewritten_words[i], glued[i]});
  return JoinWords(words);
}

std::string RealizeSurface(std::string_view substitute_lemma, std::string_view original_surface,
                           PosTag tag, std::optional<std::string_view> original_lemma) {
  std::string lower = ToLower(original_surface);
  std::string out(substitute_lemma);
  if (out.empty() || lower.empty()) return out;
  const bool inflected = !original_lemma || lower != *original_lemma;

  if (tag == PosTag::kNoun) {
    if (inflected && lower.size() > 1 && lower.ends_with("s") && !lower.ends_with("ss")) {
      out = AddS(out);
    }
  } else if (tag == PosTag::kVerb && inflected) {
    if (lower.size() > 4 && lower.ends_with("ing")) {
      out = AddIng(out);
    } else if (lower.size() > 3 && lower.ends_with("ed")) {
      out = AddEd(out);
    } else if (lower.size() > 1 && lower.ends_with("s") && !lower.ends_with("ss")) {
      out = AddS(out);
    }
  }

  if (std::isupper(static_cast<unsigned char>(original_surface.front()))) {
    out[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(out[0])));
  }
  return out;
}

RewriteResult RewriteSentence(std::string_view text, const WordNetGraph& graph,
                              const QuantifierLexicon& quantifiers, uint64_t seed,
                              const RewriteOptions& options) {
  std::vector<TaggedWord> words = TagSentence(text, graph, quantifiers);
  std::vector<size_t> candidates = SelectRewriteCandidates(words, graph, quantifiers);
  Rng rng(seed);
  rng.Shuffle(candidates);

  for (size_t index : candidates) {
    const TaggedWord& target = words[index];
    std::vector<std::string> pool;
    SearchOrder order = SearchOrder::kFirst;

    if (target.tag == PosTag::kQuantifier) {
      pool = QuantifierSubstitutes(quantifiers, target.lemma);
      order = SearchOrder::kQuantifierLexicon;
    } else if (auto pos = ToWordNetPos(target.tag)) {
      if (options.random_word) {
        const auto& all = graph.Lemmas(*pos);
        // Rejection-sample a different lemma; the list is large.
        if (all.size() > 1) {
          std::string pick;
          do {
            pick = all[rng.Below(all.size())];
          } while (pick == target.lemma);
          pool.push_back(pick);
        }
        order = SearchOrder::kRandomWord;
      } else {
        pool = graph.CoHyponymCandidates(target.lemma, *pos, 1);
        if (pool.empty()) {
          pool = graph.CoHyponymCandidates(target.lemma, *pos, 2);
          order = SearchOrder::kSecond;
        }
      }
    }
    RewriteResult r;
    // Suffix transfer can map a different lemma back onto the original
    // surface; such a draw would not change the sentence.
    while (!pool.empty()) {
      size_t pick = rng.Below(pool.size());
      std::string surface = RealizeSurface(pool[pick], target.surface, target.tag, target.lemma);
      if (ToLower(surface) != ToLower(target.surface)) {
        r.substitute_lemma = pool[pick];
        r.substitute_surface = std::move(surface);
        break;
      }
      pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(pick));
    }
    if (r.substitute_lemma.empty()) continue;

    r.seed = seed;
    r.replaced_index = index;
    r.tag = target.tag;
    r.original_lemma = target.lemma;
    r.search_order = order;
    for (const TaggedWord& w : words) {
      r.original_words.push_back(w.surface);
      r.glued.push_back(w.glued);
    }
    r.rewritten_words = r.original_words;
    r.rewritten_words[index] = r.substitute_surface;
    return r;
  }
  throw Error(Errc::kNoCandidate, "no word of \"" + std::string(text) + "\" admits a substitute");
}

}  // namespace finevl
