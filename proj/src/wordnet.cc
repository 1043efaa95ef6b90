#include "finevl/wordnet.h"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include "finevl/error.h"
#include "finevl/text.h"

namespace finevl {
namespace {

namespace fs = std::filesystem;

struct FileReader {
  std::string name;
  std::string content;
};

FileReader ReadWholeFile(const fs::path& dir, const std::string& name) {
  fs::path path = dir / name;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::kMissingFile, name);
  std::ostringstream ss;
  ss << in.rdbuf();
  return {name, ss.str()};
}

[[noreturn]] void Fail(const std::string& file, size_t line, const std::string& reason) {
  throw Error(Errc::kParseError, file + ":" + std::to_string(line) + ": " + reason);
}

std::vector<std::string_view> SplitFields(std::string_view line) {
  std::vector<std::string_view> fields;
  size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && line[i] == ' ') ++i;
    size_t start = i;
    while (i < line.size() && line[i] != ' ') ++i;
    if (start < i) fields.push_back(line.substr(start, i - start));
  }
  return fields;
}

template <typename T>
bool ParseNumber(std::string_view s, T& out, int base = 10) {
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out, base);
  return ec == std::errc() && ptr == s.data() + s.size();
}

std::optional<Pos> PosFromLetter(std::string_view s) {
  if (s.size() != 1) return std::nullopt;
  switch (s[0]) {
    case 'n': return Pos::kNoun;
    case 'v': return Pos::kVerb;
    case 'a':
    case 's': return Pos::kAdj;
    case 'r': return Pos::kAdv;
    default: return std::nullopt;
  }
}

// Adjective lemmas may carry a syntactic marker: "(a)", "(p)" or "(ip)".
std::string NormalizeLemma(std::string_view word) {
  size_t paren = word.find('(');
  if (paren != std::string_view::npos && word.back() == ')') word = word.substr(0, paren);
  return ToLower(word);
}

bool IsHeaderLine(std::string_view line) { return !line.empty() && line[0] == ' '; }

template <typename F>
void ForEachLine(const std::string& content, F&& fn) {
  size_t pos = 0;
  size_t line_no = 0;
  while (pos < content.size()) {
    size_t end = content.find('\n', pos);
    if (end == std::string::npos) end = content.size();
    std::string_view line(content.data() + pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    fn(line, ++line_no, pos);
    pos = end + 1;
  }
}

}  // namespace

std::string_view PosFileSuffix(Pos pos) {
  switch (pos) {
    case Pos::kNoun: return "noun";
    case Pos::kVerb: return "verb";
    case Pos::kAdj: return "adj";
    case Pos::kAdv: return "adv";
  }
  return "";
}

char PosLetter(Pos pos) {
  switch (pos) {
    case Pos::kNoun: return 'n';
    case Pos::kVerb: return 'v';
    case Pos::kAdj: return 'a';
    case Pos::kAdv: return 'r';
  }
  return '?';
}

WordNetGraph WordNetGraph::Load(const fs::path& dir) {
  // Check every file up front so the error names the first missing file
  // regardless of parse order.
  std::array<FileReader, 4> data_files;
  std::array<FileReader, 4> index_files;
  for (Pos pos : kAllPos) {
    std::string suffix(PosFileSuffix(pos));
    if (!fs::exists(dir / ("index." + suffix))) throw Error(Errc::kMissingFile, "index." + suffix);
    if (!fs::exists(dir / ("data." + suffix))) throw Error(Errc::kMissingFile, "data." + suffix);
  }

  WordNetGraph g;
  struct PendingPtr {
    size_t from;
    SynsetId to;
    bool hypernym;
    size_t line;
    std::string file;
  };
  std::vector<PendingPtr> pending;

  for (Pos pos : kAllPos) {
    const size_t p = static_cast<size_t>(pos);
    data_files[p] = ReadWholeFile(dir, "data." + std::string(PosFileSuffix(pos)));
    const FileReader& file = data_files[p];
    ForEachLine(file.content, [&](std::string_view line, size_t line_no, size_t byte_offset) {
      if (line.empty()) return;
      if (IsHeaderLine(line)) {
        if (g.version_ == "unknown") {
          size_t at = line.find("WordNet ");
          if (at != std::string_view::npos) {
            auto rest = SplitFields(line.substr(at + 8));
            if (!rest.empty()) g.version_ = std::string(rest[0]);
          }
        }
        return;
      }
      size_t bar = line.find('|');
      std::string_view body = bar == std::string_view::npos ? line : line.substr(0, bar);
      auto f = SplitFields(body);
      if (f.size() < 6) Fail(file.name, line_no, "too few fields");

      Synset s;
      if (!ParseNumber(f[0], s.id.offset)) Fail(file.name, line_no, "bad synset offset");
      if (s.id.offset != byte_offset) {
        Fail(file.name, line_no, "synset offset " + std::string(f[0]) + " does not match byte position " +
                                     std::to_string(byte_offset));
      }
      s.id.pos = pos;
      auto ss_type = PosFromLetter(f[2]);
      if (!ss_type || *ss_type != pos) Fail(file.name, line_no, "bad ss_type '" + std::string(f[2]) + "'");
      s.satellite = f[2] == "s";

      size_t w_cnt = 0;
      if (!ParseNumber(f[3], w_cnt, 16) || w_cnt == 0) Fail(file.name, line_no, "bad w_cnt");
      size_t i = 4;
      if (f.size() < i + 2 * w_cnt + 1) Fail(file.name, line_no, "truncated word list");
      for (size_t k = 0; k < w_cnt; ++k) {
        s.lemmas.push_back(NormalizeLemma(f[i]));
        i += 2;
      }
      size_t p_cnt = 0;
      if (!ParseNumber(f[i], p_cnt)) Fail(file.name, line_no, "bad p_cnt");
      ++i;
      if (f.size() < i + 4 * p_cnt) Fail(file.name, line_no, "truncated pointer list");
      const size_t index = g.synsets_.size();
      for (size_t k = 0; k < p_cnt; ++k, i += 4) {
        std::string_view symbol = f[i];
        SynsetId target;
        if (!ParseNumber(f[i + 1], target.offset)) Fail(file.name, line_no, "bad pointer offset");
        auto target_pos = PosFromLetter(f[i + 2]);
        if (!target_pos) Fail(file.name, line_no, "bad pointer pos");
        target.pos = *target_pos;
        if (symbol == "@" || symbol == "@i") {
          pending.push_back({index, target, true, line_no, file.name});
        } else if (symbol == "&") {
          pending.push_back({index, target, false, line_no, file.name});
        }
      }
      if (bar != std::string_view::npos) s.gloss = Trim(line.substr(bar + 1));

      if (!g.by_id_.emplace(s.id, index).second) Fail(file.name, line_no, "duplicate synset offset");
      g.synsets_.push_back(std::move(s));
      ++g.per_pos_count_[p];
    });
  }

  for (const PendingPtr& ptr : pending) {
    auto it = g.by_id_.find(ptr.to);
    if (it == g.by_id_.end()) {
      Fail(ptr.file, ptr.line, "pointer to unknown synset " + std::to_string(ptr.to.offset));
    }
    Synset& from = g.synsets_[ptr.from];
    if (ptr.hypernym) {
      from.hypernyms.push_back(ptr.to);
      g.synsets_[it->second].hyponyms.push_back(from.id);
    } else {
      from.similar.push_back(ptr.to);
    }
  }

  for (Pos pos : kAllPos) {
    const size_t p = static_cast<size_t>(pos);
    index_files[p] = ReadWholeFile(dir, "index." + std::string(PosFileSuffix(pos)));
    const FileReader& file = index_files[p];
    ForEachLine(file.content, [&](std::string_view line, size_t line_no, size_t) {
      if (line.empty() || IsHeaderLine(line)) return;
      auto f = SplitFields(line);
      if (f.size() < 6) Fail(file.name, line_no, "too few fields");
      size_t synset_cnt = 0;
      size_t ptr_cnt = 0;
      if (!ParseNumber(f[2], synset_cnt)) Fail(file.name, line_no, "bad synset_cnt");
      if (!ParseNumber(f[3], ptr_cnt)) Fail(file.name, line_no, "bad p_cnt");
      auto index_pos = PosFromLetter(f[1]);
      if (!index_pos || *index_pos != pos) Fail(file.name, line_no, "bad pos field");
      // lemma pos synset_cnt p_cnt [ptr...] sense_cnt tagsense_cnt [offset...]
      if (f.size() != 4 + ptr_cnt + 2 + synset_cnt) Fail(file.name, line_no, "field count mismatch");
      std::vector<SynsetId> ids;
      ids.reserve(synset_cnt);
      for (size_t k = f.size() - synset_cnt; k < f.size(); ++k) {
        SynsetId id{0, pos};
        if (!ParseNumber(f[k], id.offset)) Fail(file.name, line_no, "bad offset");
        if (!g.by_id_.contains(id)) {
          Fail(file.name, line_no, "offset " + std::string(f[k]) + " not in data file");
        }
        ids.push_back(id);
      }
      std::string lemma = ToLower(f[0]);
      if (lemma.find('_') == std::string::npos) g.lemma_list_[p].push_back(lemma);
      g.lemma_index_[p].emplace(std::move(lemma), std::move(ids));
    });
  }
  return g;
}

const std::vector<SynsetId>& WordNetGraph::Lookup(std::string_view lemma, Pos pos) const {
  static const std::vector<SynsetId> kEmpty;
  const auto& index = lemma_index_[static_cast<size_t>(pos)];
  auto it = index.find(std::string(lemma));
  return it == index.end() ? kEmpty : it->second;
}

const Synset* WordNetGraph::Find(SynsetId id) const {
  auto it = by_id_.find(id);
  return it == by_id_.end() ? nullptr : &synsets_[it->second];
}

const Synset& WordNetGraph::Get(SynsetId id) const {
  const Synset* s = Find(id);
  if (s == nullptr) {
    throw Error(Errc::kUnknownSynset,
                std::to_string(id.offset) + std::string(1, PosLetter(id.pos)));
  }
  return *s;
}

const std::vector<SynsetId>& WordNetGraph::Related(SynsetId id, Relation relation) const {
  const Synset& s = Get(id);
  return relation == Relation::kHypernym ? s.hypernyms : s.hyponyms;
}

void WordNetGraph::AdjectiveCluster(SynsetId id, std::vector<SynsetId>& out) const {
  const Synset& s = Get(id);
  std::vector<SynsetId> heads;
  if (s.satellite) {
    heads = s.similar;
  } else {
    heads.push_back(id);
  }
  for (SynsetId head : heads) {
    out.push_back(head);
    const Synset& h = Get(head);
    out.insert(out.end(), h.similar.begin(), h.similar.end());
  }
}

std::vector<std::string> WordNetGraph::CoHyponymCandidates(std::string_view lemma, Pos pos,
                                                           int order) const {
  if (order != 1 && order != 2) {
    throw Error(Errc::kInvalidArgument, "co-hyponym order must be 1 or 2");
  }
  const auto& senses = Lookup(lemma, pos);
  std::unordered_set<std::string> excluded;
  excluded.emplace(lemma);
  for (SynsetId id : senses) {
    for (const auto& l : Get(id).lemmas) excluded.insert(l);
  }

  std::vector<std::string> out;
  std::unordered_set<std::string> seen;
  auto take = [&](SynsetId id) {
    for (const auto& l : Get(id).lemmas) {
      if (l.find('_') != std::string::npos) continue;
      if (excluded.contains(l)) continue;
      if (seen.insert(l).second) out.push_back(l);
    }
  };

  if (pos == Pos::kAdj) {
    if (order != 1) return out;
    for (SynsetId id : senses) {
      std::vector<SynsetId> cluster;
      AdjectiveCluster(id, cluster);
      for (SynsetId c : cluster) take(c);
    }
    return out;
  }

  for (SynsetId id : senses) {
    std::vector<SynsetId> up{id};
    for (int step = 0; step < order; ++step) {
      std::vector<SynsetId> next;
      for (SynsetId u : up) {
        const auto& h = Get(u).hypernyms;
        next.insert(next.end(), h.begin(), h.end());
      }
      up = std::move(next);
    }
    for (SynsetId ancestor : up) {
      std::vector<SynsetId> down{ancestor};
      for (int step = 0; step < order; ++step) {
        std::vector<SynsetId> next;
        for (SynsetId d : down) {
          const auto& h = Get(d).hyponyms;
          next.insert(next.end(), h.begin(), h.end());
        }
        down = std::move(next);
      }
      for (SynsetId d : down) take(d);
    }
  }
  return out;
}

bool WordNetGraph::HasAncestor(SynsetId id, SynsetId root) const {
  std::vector<SynsetId> stack{id};
  std::unordered_set<SynsetId, SynsetIdHash> visited;
  while (!stack.empty()) {
    SynsetId cur = stack.back();
    stack.pop_back();
    if (cur == root) return true;
    if (!visited.insert(cur).second) continue;
    for (SynsetId h : Get(cur).hypernyms) stack.push_back(h);
  }
  return false;
}

}  // namespace finevl
