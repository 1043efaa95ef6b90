#ifndef FINEVL_WORDNET_H_
#define FINEVL_WORDNET_H_

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace finevl {

enum class Pos : uint8_t { kNoun = 0, kVerb = 1, kAdj = 2, kAdv = 3 };

inline constexpr std::array<Pos, 4> kAllPos = {Pos::kNoun, Pos::kVerb, Pos::kAdj, Pos::kAdv};

// WNDB file suffix: "noun", "verb", "adj", "adv".
std::string_view PosFileSuffix(Pos pos);
// Single-letter WNDB tag: n, v, a, r.
char PosLetter(Pos pos);

struct SynsetId {
  uint32_t offset = 0;
  Pos pos = Pos::kNoun;

  friend bool operator==(const SynsetId&, const SynsetId&) = default;
  friend auto operator<=>(const SynsetId&, const SynsetId&) = default;
};

struct SynsetIdHash {
  size_t operator()(const SynsetId& id) const noexcept {
    return std::hash<uint64_t>()((uint64_t{id.offset} << 2) | static_cast<uint64_t>(id.pos));
  }
};

struct Synset {
  SynsetId id;
  std::vector<std::string> lemmas;   // lowercase, syntactic markers stripped
  std::vector<SynsetId> hypernyms;   // `@` and `@i`, data-file pointer order
  std::vector<SynsetId> hyponyms;    // inverse of hypernyms
  std::vector<SynsetId> similar;     // `&` (adjective clusters)
  bool satellite = false;            // ss_type `s`
  std::string gloss;
};

enum class Relation { kHypernym, kHyponym };

// Immutable in-memory view of a WNDB directory (index.pos + data.pos files).
class WordNetGraph {
 public:
  // Throws Error{kMissingFile} naming the missing file, or Error{kParseError}
  // with file, line number and reason.
  static WordNetGraph Load(const std::filesystem::path& dir);

  const std::string& version() const { return version_; }
  size_t size() const { return synsets_.size(); }
  size_t size(Pos pos) const { return per_pos_count_[static_cast<size_t>(pos)]; }

  // Empty when the lemma is absent. Lemma must be lowercase with spaces
  // replaced by underscores. Order is database sense order.
  const std::vector<SynsetId>& Lookup(std::string_view lemma, Pos pos) const;
  bool Contains(std::string_view lemma, Pos pos) const { return !Lookup(lemma, pos).empty(); }

  const Synset& Get(SynsetId id) const;
  const Synset* Find(SynsetId id) const;
  const std::vector<SynsetId>& Related(SynsetId id, Relation relation) const;

  // Co-hyponym lemmas of `lemma` (order 1: siblings via a shared hypernym;
  // order 2: cousins via a shared grandparent). Adjectives use their `&`
  // cluster instead and have no order-2 candidates.
  std::vector<std::string> CoHyponymCandidates(std::string_view lemma, Pos pos, int order) const;

  // True if any ancestor (over hypernym edges, including `id` itself) is
  // the synset `root`.
  bool HasAncestor(SynsetId id, SynsetId root) const;

  // Visits synsets in file order.
  template <typename F>
  void ForEach(F&& fn) const {
    for (const Synset& s : synsets_) fn(s);
  }

  // All single-token lemmas of a part of speech in index-file order.
  const std::vector<std::string>& Lemmas(Pos pos) const { return lemma_list_[static_cast<size_t>(pos)]; }

 private:
  WordNetGraph() = default;

  void AdjectiveCluster(SynsetId id, std::vector<SynsetId>& out) const;

  std::string version_ = "unknown";
  std::vector<Synset> synsets_;
  std::unordered_map<SynsetId, size_t, SynsetIdHash> by_id_;
  std::array<std::unordered_map<std::string, std::vector<SynsetId>>, 4> lemma_index_;
  std::array<std::vector<std::string>, 4> lemma_list_;
  std::array<size_t, 4> per_pos_count_{};
};

}  // namespace finevl

#endif  // FINEVL_WORDNET_H_
