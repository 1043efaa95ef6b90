// End-to-end acceptance run: prints one PASS/FAIL line per criterion and
// exits non-zero if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "finevl/error.h"
#include "finevl/gradcheck.h"
#include "finevl/linguistics.h"
#include "finevl/losses.h"
#include "finevl/rewriter.h"
#include "finevl/rng.h"
#include "finevl/text.h"
#include "finevl/tokenizer.h"
#include "finevl/toymodel.h"
#include "finevl/wordnet.h"
#include "tokenizer_cases.h"

namespace fs = std::filesystem;
using namespace finevl;

namespace {

using Clock = std::chrono::steady_clock;

double SecondsSince(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Verdict {
  bool passed = true;
  std::ostringstream detail;

  // Records a failed expectation; the first few are kept in the detail.
  void Expect(bool ok, const std::string& what) {
    if (ok) return;
    if (passed) detail << "first failure: " << what << "; ";
    passed = false;
  }
};

int failures = 0;

void Report(int number, const std::string& title, Verdict& v) {
  if (!v.passed) ++failures;
  std::cout << (v.passed ? "PASS" : "FAIL") << " [" << number << "] " << title << " — " << v.detail.str()
            << std::endl;
}

void RunCriterion(int number, const std::string& title, const std::function<void(Verdict&)>& body) {
  Verdict v;
  try {
    body(v);
  } catch (const std::exception& e) {
    v.Expect(false, std::string("exception: ") + e.what());
  }
  Report(number, title, v);
}

fs::path WordNetDir() {
  if (const char* env = std::getenv("FINEVL_WORDNET")) return env;
  return FINEVL_DEFAULT_WORDNET_DIR;
}

bool HaveWordNet() { return fs::exists(WordNetDir() / "data.noun"); }

const WordNetGraph& RealWordNet() {
  static const WordNetGraph graph = WordNetGraph::Load(WordNetDir());
  return graph;
}

// ---------------------------------------------------------------------------
// Caption generator for the rewrite suite: toy-world captions plus a small
// open-vocabulary grammar.

std::string Pick(Rng& rng, const std::vector<std::string>& v) { return v[rng.Below(v.size())]; }

std::string GrammarCaption(Rng& rng) {
  static const std::vector<std::string> kSingular = {"a", "one", "the"};
  static const std::vector<std::string> kPlural = {"two", "three", "several", "many", "some"};
  static const std::vector<std::string> kAdj = {"red", "small", "large", "old", "young", "wooden",
                                                "black", "white", "happy", "tall"};
  static const std::vector<std::string> kNoun = {"dog",   "cat",   "horse", "car",   "truck", "bicycle",
                                                 "bird",  "table", "chair", "boat",  "train", "pizza",
                                                 "girl",  "boy",   "apple", "umbrella"};
  static const std::vector<std::string> kVerb = {"sitting", "standing", "running", "eating",  "riding",
                                                 "holding", "walking",  "sleeping", "playing", "looking"};
  static const std::vector<std::string> kPrep = {"on", "near", "under", "beside"};
  static const std::vector<std::string> kPlace = {"table", "street", "grass", "beach", "sofa",
                                                  "bench", "field",  "road",  "river", "hill"};
  auto np = [&] {
    if (rng.Below(2) == 0) return Pick(rng, kSingular) + " " + Pick(rng, kAdj) + " " + Pick(rng, kNoun);
    return Pick(rng, kPlural) + " " + Pick(rng, kAdj) + " " + Pick(rng, kNoun) + "s";
  };
  switch (rng.Below(3)) {
    case 0: return np() + " " + Pick(rng, kVerb) + " " + Pick(rng, kPrep) + " the " + Pick(rng, kPlace);
    case 1: return np() + " and " + np();
    default: return np() + " " + Pick(rng, kVerb) + " near " + np();
  }
}

std::vector<std::string> GeneratedCaptions(size_t n, uint64_t seed) {
  std::vector<std::string> out;
  Rng rng(seed);
  ToyCorpus toy = GenerateToyCorpus(seed, n / 2, 1);
  for (const ToyScene& s : toy.train) out.push_back(s.caption);
  while (out.size() < n) out.push_back(GrammarCaption(rng));
  return out;
}

// Hypernym ancestors of every sense of `lemma` within `hops` steps.
std::set<SynsetId> Ancestors(const WordNetGraph& g, const std::string& lemma, Pos pos, int hops) {
  std::set<SynsetId> out;
  std::vector<SynsetId> frontier = g.Lookup(lemma, pos);
  for (int h = 0; h < hops; ++h) {
    std::vector<SynsetId> next;
    for (SynsetId s : frontier) {
      for (SynsetId p : g.Get(s).hypernyms) next.push_back(p);
    }
    frontier = std::move(next);
    out.insert(frontier.begin(), frontier.end());
  }
  return out;
}

// Adjective cluster heads of every sense of `lemma`.
std::set<SynsetId> ClusterHeads(const WordNetGraph& g, const std::string& lemma) {
  std::set<SynsetId> out;
  for (SynsetId s : g.Lookup(lemma, Pos::kAdj)) {
    const Synset& syn = g.Get(s);
    if (syn.satellite) {
      out.insert(syn.similar.begin(), syn.similar.end());
    } else {
      out.insert(s);
    }
  }
  return out;
}

bool Intersects(const std::set<SynsetId>& a, const std::set<SynsetId>& b) {
  for (SynsetId s : a) {
    if (b.contains(s)) return true;
  }
  return false;
}

bool SameRewrite(const RewriteResult& a, const RewriteResult& b) {
  return a.original_words == b.original_words && a.rewritten_words == b.rewritten_words &&
         a.replaced_index == b.replaced_index && a.tag == b.tag && a.original_lemma == b.original_lemma &&
         a.substitute_lemma == b.substitute_lemma && a.substitute_surface == b.substitute_surface &&
         a.search_order == b.search_order;
}

// Synsets in a WNDB data file: every line that is not part of the
// license header (which starts with two spaces).
size_t CountDataLines(const fs::path& file) {
  std::ifstream in(file);
  size_t n = 0;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && !line.starts_with("  ")) ++n;
  }
  return n;
}

// ---------------------------------------------------------------------------

void GradientCriterion(Verdict& v) {
  auto start = Clock::now();
  std::vector<GradCheckRow> rows = RunGradCheckSuite(100, 0, 1e-5, 1e-4);
  const double seconds = SecondsSince(start);
  std::set<std::string> names;
  for (const GradCheckRow& r : rows) {
    names.insert(r.name);
    v.Expect(r.passed && r.max_rel_error < 1e-4, r.name + " max rel error " + std::to_string(r.max_rel_error));
    v.Expect(r.points >= 100, r.name + " checked at fewer than 100 points");
    v.detail << r.name << " " << std::scientific << r.max_rel_error << std::defaultfloat << ", ";
  }
  for (const char* required : {"itc", "ritc", "ritm", "mlm", "rlm", "toy_model"}) {
    v.Expect(names.contains(required), std::string("missing row ") + required);
  }
  v.Expect(seconds < 120.0, "runtime over 2 minutes");
  v.detail << "100 points each, " << seconds << " s";
}

void RewriteCriterion(Verdict& v) {
  if (!HaveWordNet()) {
    v.Expect(false, "WordNet not found at " + WordNetDir().string());
    return;
  }
  const WordNetGraph& g = RealWordNet();
  const QuantifierLexicon& quant = DefaultQuantifierLexicon();
  std::vector<std::string> captions = GeneratedCaptions(2000, 11);
  size_t done = 0, no_candidate = 0, one_diff = 0, new_lemma = 0, related = 0, non_quant = 0, pos_kept = 0,
         deterministic = 0;
  for (size_t i = 0; i < captions.size() && done < 1000; ++i) {
    const uint64_t seed = DeriveSeed(29, i);
    RewriteResult r;
    try {
      r = RewriteSentence(captions[i], g, quant, seed);
    } catch (const Error& e) {
      if (e.code() != Errc::kNoCandidate) throw;
      ++no_candidate;
      continue;
    }
    ++done;
    size_t diffs = 0;
    bool diff_at_index = false;
    for (size_t w = 0; w < r.original_words.size() && w < r.rewritten_words.size(); ++w) {
      if (r.original_words[w] != r.rewritten_words[w]) {
        ++diffs;
        diff_at_index = w == r.replaced_index;
      }
    }
    if (r.original_words.size() == r.rewritten_words.size() && diffs == 1 && diff_at_index) ++one_diff;
    if (ToLower(r.substitute_lemma) != ToLower(r.original_lemma)) ++new_lemma;

    if (r.tag == PosTag::kQuantifier) {
      if (quant.Contains(r.original_lemma) && quant.Contains(r.substitute_lemma)) ++pos_kept;
    } else {
      ++non_quant;
      auto pos = ToWordNetPos(r.tag);
      if (pos && g.Contains(r.substitute_lemma, *pos)) ++pos_kept;
      bool ok = false;
      if (pos == Pos::kAdj) {
        ok = r.search_order == SearchOrder::kFirst &&
             Intersects(ClusterHeads(g, r.original_lemma), ClusterHeads(g, r.substitute_lemma));
      } else if (pos) {
        const int hops = r.search_order == SearchOrder::kFirst ? 1 : r.search_order == SearchOrder::kSecond ? 2 : 0;
        ok = hops > 0 && Intersects(Ancestors(g, r.original_lemma, *pos, hops),
                                    Ancestors(g, r.substitute_lemma, *pos, hops));
      }
      if (ok) ++related;
    }
    if (SameRewrite(r, RewriteSentence(captions[i], g, quant, seed))) ++deterministic;
  }
  v.Expect(done == 1000, "only " + std::to_string(done) + " rewrites produced");
  v.Expect(one_diff == done, "one-word difference");
  v.Expect(new_lemma == done, "substitute differs from lemma");
  v.Expect(related == non_quant, "shared hypernym within search order");
  v.Expect(pos_kept == done, "part of speech preserved");
  v.Expect(deterministic == done, "determinism");
  v.detail << done << " rewrites (" << no_candidate << " captions without candidate skipped): one-word diff "
           << one_diff << ", new lemma " << new_lemma << ", related " << related << "/" << non_quant
           << ", POS kept " << pos_kept << ", deterministic " << deterministic;
}

void MaskingCriterion(Verdict& v) {
  if (!HaveWordNet()) {
    v.Expect(false, "WordNet not found at " + WordNetDir().string());
    return;
  }
  const WordNetGraph& g = RealWordNet();
  const Vocab vocab = BuildToyVocab();
  ToyCorpus corpus = GenerateToyCorpus(5, 20000, 1);
  size_t tokens = 0, selected = 0, masked = 0, replaced = 0, kept = 0, samples = 0, forced_ok = 0;
  for (size_t i = 0; tokens < 100000 && i < corpus.train.size(); ++i) {
    RewriteResult r = RewriteSentence(corpus.train[i].caption, g, DefaultQuantifierLexicon(), DeriveSeed(41, i));
    TokenSeq seq = Tokenize(r.rewritten_text(), vocab);
    std::optional<TokenSpan> span = seq.SpanOf(r.replaced_index);
    if (!span) continue;
    ++samples;
    MaskedSeq m = ApplyMlmMask(seq, span, vocab, DeriveSeed(43, i));
    bool all_labeled = m.forced_position == span->start;
    for (size_t p = span->start; p < span->end; ++p) all_labeled = all_labeled && m.mlm_labels[p] == seq.ids[p];
    if (all_labeled) ++forced_ok;
    for (size_t p = 1; p + 1 < seq.size(); ++p) {
      if (p >= span->start && p < span->end) continue;
      ++tokens;
      if (m.mlm_labels[p] == kIgnoreLabel) continue;
      ++selected;
      if (m.ids[p] == vocab.mask_id()) {
        ++masked;
      } else if (m.ids[p] == seq.ids[p]) {
        ++kept;
      } else {
        ++replaced;
      }
    }
  }
  const double rate = static_cast<double>(selected) / static_cast<double>(tokens);
  const double fm = static_cast<double>(masked) / static_cast<double>(selected);
  const double fr = static_cast<double>(replaced) / static_cast<double>(selected);
  const double fk = static_cast<double>(kept) / static_cast<double>(selected);
  v.Expect(tokens >= 100000, "fewer than 1e5 tokens");
  v.Expect(rate >= 0.14 && rate <= 0.16, "selection rate");
  v.Expect(std::abs(fm - 0.8) <= 0.02 && std::abs(fr - 0.1) <= 0.02 && std::abs(fk - 0.1) <= 0.02,
           "corruption split");
  v.Expect(forced_ok == samples, "replaced position not labeled");
  v.detail << tokens << " unforced tokens: rate " << rate << ", split " << fm << "/" << fr << "/" << fk
           << "; replaced position labeled in " << forced_ok << "/" << samples << " samples";
}

void IdentityCriterion(Verdict& v) {
  Rng rng(7);
  Matrix t(1, 8), i(1, 8);
  for (Eigen::Index k = 0; k < 8; ++k) {
    t(0, k) = rng.Normal(0.0, 1.0);
    i(0, k) = rng.Normal(0.0, 1.0);
  }
  t.rowwise().normalize();
  i.rowwise().normalize();
  const double single = ItcLoss(t, i, i, t, std::log(0.07)).loss;
  v.Expect(std::abs(single) < 1e-9, "single-pair ITC");

  double worst_uniform = 0.0;
  for (Eigen::Index n : {1, 4, 16}) {
    for (Eigen::Index m : {0, 5, 64}) {
      Matrix e = Matrix::Zero(n, 6);
      e.col(0).setOnes();
      Matrix cand = Matrix::Zero(n + m, 6);
      cand.col(0).setOnes();
      const double loss = ItcLoss(e, e, cand, cand, std::log(0.07)).loss;
      worst_uniform = std::max(worst_uniform, std::abs(loss - 2.0 * std::log(static_cast<double>(n + m))));
    }
  }
  v.Expect(worst_uniform < 1e-9, "uniform ITC");

  double worst_rlm = 0.0;
  for (size_t len : {3, 10, 30}) {
    std::vector<bool> valid(len, true);
    valid.front() = valid.back() = false;
    const double loss = RlmLoss(Vector::Zero(static_cast<Eigen::Index>(len)), RlmTarget{1, len}, valid).loss;
    worst_rlm = std::max(worst_rlm, std::abs(loss - std::log(static_cast<double>(len - 2))));
  }
  v.Expect(worst_rlm < 1e-9, "uniform RLM");

  Vector img = Vector::Unit(3, 0);
  Matrix tok = Matrix::Zero(3, 3), rew = Matrix::Zero(3, 3);
  tok.col(0) << 0.9, 0.8, 1.0;
  rew.col(0) << 0.5, 0.7, 0.6;
  std::vector<bool> all(3, true);
  const double ritc = RitcLoss(img, tok, rew, all, all, 0.2).loss;
  v.Expect(ritc == 0.0, "satisfied-margin RITC");

  const double ritm = RitmLoss(Matrix::Zero(4, 2), Matrix::Zero(3, 2), Matrix::Zero(5, 2)).loss;
  v.Expect(std::abs(ritm - std::log(2.0)) < 1e-9, "uniform RITM");
  v.detail << "single ITC " << single << ", uniform ITC err " << worst_uniform << ", uniform RLM err " << worst_rlm
           << ", RITC " << ritc << ", RITM err " << std::abs(ritm - std::log(2.0));
}

bool EveryComponentHalved(const std::vector<EpochMetrics>& timeline, std::ostringstream& detail) {
  if (timeline.size() < 2) return false;
  const EpochMetrics& first = timeline.front();
  const EpochMetrics& last = timeline.back();
  bool ok = true;
  auto check = [&](const char* name, const std::optional<double>& a, const std::optional<double>& b) {
    if (!a || !b) {
      ok = false;
      return;
    }
    const double drop = 1.0 - *b / *a;
    detail << name << " -" << static_cast<int>(std::round(100 * drop)) << "%, ";
    ok = ok && drop >= 0.5;
  };
  check("itc", first.itc, last.itc);
  check("ritc", first.ritc, last.ritc);
  check("ritm", first.ritm, last.ritm);
  check("mlm", first.mlm, last.mlm);
  check("rlm", first.rlm, last.rlm);
  return ok;
}

struct Runs {
  std::optional<TrainResult> full, no_rlm, random_word;
};

TrainResult TimedRun(const TrainConfig& config, double* seconds) {
  auto start = Clock::now();
  TrainResult r = TrainRun(config, RealWordNet(), DefaultQuantifierLexicon());
  *seconds = SecondsSince(start);
  return r;
}

void EndToEndCriterion(Verdict& v, Runs& runs) {
  if (!HaveWordNet()) {
    v.Expect(false, "WordNet not found at " + WordNetDir().string());
    return;
  }
  TrainConfig config;
  double seconds = 0.0;
  runs.full = TimedRun(config, &seconds);
  const TrainResult& r = *runs.full;
  v.Expect(config.n_train == 2000 && config.n_eval == 200 && config.epochs <= 50, "budget");
  v.Expect(EveryComponentHalved(r.timeline, v.detail), "a loss component fell by less than 50%");
  v.Expect(r.retrieval.r1_i2t >= 0.9 && r.retrieval.r1_t2i >= 0.9, "R@1 below 0.90");
  v.Expect(r.rlm.accuracy >= 0.9, "RLM accuracy below 0.90");
  v.Expect(seconds < 600.0, "runtime over 10 minutes");
  v.detail << "R@1 i2t " << r.retrieval.r1_i2t << " t2i " << r.retrieval.r1_t2i << ", RLM acc " << r.rlm.accuracy
           << ", " << config.epochs << " epochs in " << seconds << " s";
}

void AblationCriterion(Verdict& v, Runs& runs) {
  if (!HaveWordNet() || !runs.full) {
    v.Expect(false, "full run unavailable");
    return;
  }
  TrainConfig no_rlm;
  no_rlm.no_rlm = true;
  TrainConfig random_word;
  random_word.hsr_random_word = true;
  double s1 = 0.0, s2 = 0.0;
  runs.no_rlm = TimedRun(no_rlm, &s1);
  runs.random_word = TimedRun(random_word, &s2);
  const RlmEvalResult& rlm = runs.no_rlm->rlm;
  const RetrievalMetrics& full = runs.full->retrieval;
  const RetrievalMetrics& rw = runs.random_word->retrieval;
  v.Expect(std::abs(rlm.accuracy - rlm.chance) <= 0.1, "no-RLM accuracy not near chance");
  v.Expect(rw.r1_i2t <= full.r1_i2t && rw.r1_t2i <= full.r1_t2i, "random-word R@1 above full");
  v.detail << "no-RLM acc " << rlm.accuracy << " vs chance " << rlm.chance << "; random-word R@1 " << rw.r1_i2t
           << "/" << rw.r1_t2i << " vs full " << full.r1_i2t << "/" << full.r1_t2i;
}

void TokenizerCriterion(Verdict& v) {
  const Vocab vocab = Vocab::Load(fs::path(FINEVL_FIXTURE_DIR) / "tokenizer_vocab.txt");
  const auto cases = finevl::testing::TokenizerCases();
  size_t matched = 0;
  for (const auto& c : cases) {
    TokenSeq seq = Tokenize(c.text, vocab, 30);
    if (seq.ids == c.ids) {
      ++matched;
    } else {
      v.Expect(false, "\"" + c.text.substr(0, 24) + "\"");
    }
  }
  v.Expect(cases.size() == 20, "case count");
  v.detail << matched << "/" << cases.size() << " cases match";
}

void CheckInverseEdges(const WordNetGraph& g, Verdict& v, const std::string& label) {
  size_t hyper = 0, hypo = 0, broken = 0;
  auto has = [](const std::vector<SynsetId>& ids, SynsetId id) {
    return std::find(ids.begin(), ids.end(), id) != ids.end();
  };
  g.ForEach([&](const Synset& s) {
    for (SynsetId h : s.hypernyms) {
      ++hyper;
      if (!g.Find(h) || !has(g.Get(h).hyponyms, s.id)) ++broken;
    }
    for (SynsetId c : s.hyponyms) {
      ++hypo;
      if (!g.Find(c) || !has(g.Get(c).hypernyms, s.id)) ++broken;
    }
  });
  v.Expect(broken == 0 && hyper == hypo, label + " inverse edges");
}

void WordNetCriterion(Verdict& v) {
  const fs::path mini_dir = fs::path(FINEVL_FIXTURE_DIR) / "mini_wordnet";
  WordNetGraph mini = WordNetGraph::Load(mini_dir);
  for (Pos pos : {Pos::kNoun, Pos::kVerb, Pos::kAdj, Pos::kAdv}) {
    const std::string name = pos == Pos::kNoun ? "noun" : pos == Pos::kVerb ? "verb" : pos == Pos::kAdj ? "adj" : "adv";
    v.Expect(mini.size(pos) == CountDataLines(mini_dir / ("data." + name)), "fixture count " + name);
  }
  v.Expect(mini.size() == 12, "fixture total");
  CheckInverseEdges(mini, v, "fixture");
  WordNetGraph again = WordNetGraph::Load(mini_dir);
  bool same = again.size() == mini.size();
  mini.ForEach([&](const Synset& s) {
    const Synset* o = again.Find(s.id);
    same = same && o && o->lemmas == s.lemmas && o->hypernyms == s.hypernyms && o->hyponyms == s.hyponyms &&
           o->similar == s.similar && o->gloss == s.gloss;
  });
  v.Expect(same, "fixture reload differs");
  v.detail << "fixture " << mini.size() << " synsets; ";

  if (!HaveWordNet()) {
    v.detail << "real WordNet absent, skipped";
    return;
  }
  const WordNetGraph& g = RealWordNet();
  for (Pos pos : {Pos::kNoun, Pos::kVerb, Pos::kAdj, Pos::kAdv}) {
    const std::string name = pos == Pos::kNoun ? "noun" : pos == Pos::kVerb ? "verb" : pos == Pos::kAdj ? "adj" : "adv";
    const size_t counted = CountDataLines(WordNetDir() / ("data." + name));
    v.Expect(g.size(pos) == counted, "real count " + name);
    v.detail << name << " " << g.size(pos) << "/" << counted << ", ";
  }
  v.Expect(g.size(Pos::kNoun) == 82115 && g.size(Pos::kVerb) == 13767 && g.size(Pos::kAdj) == 18156 &&
               g.size(Pos::kAdv) == 3621,
           "real totals differ from WordNet 3.0");
  CheckInverseEdges(g, v, "real");
  v.detail << "inverse edges complete";
}

}  // namespace

int main() {
  Runs runs;
  RunCriterion(1, "gradient verification", GradientCriterion);
  RunCriterion(2, "rewrite invariants", RewriteCriterion);
  RunCriterion(3, "masking statistics", MaskingCriterion);
  RunCriterion(4, "analytic loss identities", IdentityCriterion);
  RunCriterion(5, "toy end-to-end training", [&](Verdict& v) { EndToEndCriterion(v, runs); });
  RunCriterion(6, "ablation direction", [&](Verdict& v) { AblationCriterion(v, runs); });
  RunCriterion(7, "tokenizer oracle", TokenizerCriterion);
  RunCriterion(8, "wordnet loader", WordNetCriterion);
  std::cout << (failures == 0 ? "ALL PASS" : std::to_string(failures) + " FAILED") << std::endl;
  return failures == 0 ? 0 : 1;
}
