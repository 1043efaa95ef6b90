#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>

#include "doctest.h"
#include "finevl/error.h"
#include "finevl/linguistics.h"
#include "finevl/rewriter.h"
#include "finevl/rng.h"
#include "finevl/toymodel.h"
#include "test_support.h"

using namespace finevl;
using finevl::testing::HaveRealWordNet;
using finevl::testing::RealWordNet;

namespace {

ModelConfig SmallConfig(const Vocab& vocab) {
  ModelConfig c;
  c.d_model = 8;
  c.d_proj = 4;
  c.vocab_size = vocab.size();
  c.num_shapes = static_cast<int>(ToyShapes().size());
  c.num_colors = static_cast<int>(ToyColors().size());
  return c;
}

// Every scene the micro-world can express.
std::vector<ToyScene> AllScenes() {
  std::vector<ToyScene> out;
  const int s = static_cast<int>(ToyShapes().size());
  const int c = static_cast<int>(ToyColors().size());
  for (int a = 0; a < s; ++a) {
    for (int b = a; b < s; ++b) {
      for (int ca = 0; ca < c; ++ca) {
        for (int na = 1; na <= 3; ++na) {
          if (a == b) {
            ToyScene sc{{{a, ca, na}}, ""};
            sc.caption = CaptionFor(sc.objects);
            out.push_back(sc);
            continue;
          }
          for (int cb = 0; cb < c; ++cb) {
            for (int nb = 1; nb <= 3; ++nb) {
              ToyScene sc{{{a, ca, na}, {b, cb, nb}}, ""};
              sc.caption = CaptionFor(sc.objects);
              out.push_back(sc);
            }
          }
        }
      }
    }
  }
  return out;
}

BatchPlan PlanFor(const ToyModel& model, const Vocab& vocab, const std::vector<ToyScene>& scenes, uint64_t seed) {
  BatchPlan plan;
  Rng rng(seed);
  for (const ToyScene& s : scenes) {
    SamplePlan sp;
    sp.objects = s.objects;
    TokenSeq seq = Tokenize(s.caption, vocab);
    sp.text_ids = seq.ids;
    MaskedSeq m = ApplyMlmMask(seq, seq.SpanOf(1), vocab, rng.Next());
    sp.masked_ids = m.ids;
    sp.mlm_labels = m.mlm_labels;
    // Swap the colour word for another colour.
    std::string rewritten = s.caption;
    const std::string& color = ToyColors()[static_cast<size_t>(s.objects[0].color)];
    rewritten.replace(rewritten.find(color), color.size(), ToyColors()[(s.objects[0].color + 1) % ToyColors().size()]);
    TokenSeq rseq = Tokenize(rewritten, vocab);
    sp.rewritten_ids = rseq.ids;
    sp.rlm_target = BuildRlmTarget(rseq, 1);
    plan.samples.push_back(sp);
  }
  const auto n = static_cast<Eigen::Index>(scenes.size());
  Matrix sim = Matrix::Zero(n, n);
  plan.negatives = SampleHardNegatives(sim, rng.Next());
  auto unit = [&](Eigen::Index rows) {
    Matrix m(rows, model.config.d_proj);
    for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = rng.Normal(0, 1);
    return Matrix(m.rowwise().normalized());
  };
  plan.image_candidates = unit(n + 5);
  plan.text_candidates = unit(n + 5);
  return plan;
}

}  // namespace

TEST_CASE("captions follow the template") {
  CHECK(CaptionFor({{0, 0, 2}, {2, 1, 1}}) == "two red dogs and one blue car");
  CHECK(CaptionFor({{5, 4, 3}}) == "three black boxes");
  CHECK_THROWS_AS(CaptionFor({{0, 0, 4}}), Error);
  CHECK(ToyShapes().size() >= 8);
  CHECK(ToyColors().size() >= 5);
}

TEST_CASE("corpus generation is deterministic with unique, held-out eval captions") {
  ToyCorpus a = GenerateToyCorpus(0, 4, 4);
  ToyCorpus b = GenerateToyCorpus(0, 4, 4);
  REQUIRE(a.train.size() == 4);
  for (size_t i = 0; i < 4; ++i) {
    CHECK(a.train[i].caption == b.train[i].caption);
    CHECK(a.train[i].objects == b.train[i].objects);
    CHECK(a.eval[i].caption == b.eval[i].caption);
  }
  ToyCorpus big = GenerateToyCorpus(7, 2000, 200);
  std::set<std::string> eval;
  for (const ToyScene& s : big.eval) {
    CHECK(s.caption == CaptionFor(s.objects));
    eval.insert(s.caption);
  }
  CHECK(eval.size() == 200);
  for (const ToyScene& s : big.train) CHECK_FALSE(eval.contains(s.caption));
  CHECK_THROWS_AS(GenerateToyCorpus(0, 0, 1), Error);
  CHECK_THROWS_AS(GenerateToyCorpus(0, 1, 100000), Error);
}

TEST_CASE("caption noise") {
  const std::string caption = "two red dogs and one blue car";
  CHECK(NoisyCaption(caption, 0.0, 3) == caption);
  size_t dropped = 0, total = 0;
  for (uint64_t s = 0; s < 2000; ++s) {
    std::string noisy = NoisyCaption(caption, 0.3, s);
    CHECK_FALSE(noisy.empty());
    total += 7;
    dropped += 7 - static_cast<size_t>(std::count(noisy.begin(), noisy.end(), ' ') + 1);
  }
  CHECK(static_cast<double>(dropped) / static_cast<double>(total) == doctest::Approx(0.3).epsilon(0.1));
  CHECK(NoisyCaption(caption, 0.3, 11) == NoisyCaption(caption, 0.3, 11));
}

TEST_CASE("toy vocabulary covers the micro-world without [UNK]") {
  Vocab vocab = BuildToyVocab();
  for (const ToyScene& s : AllScenes()) {
    TokenSeq seq = Tokenize(s.caption, vocab);
    CHECK(std::count(seq.ids.begin(), seq.ids.end(), vocab.unk_id()) == 0);
  }
  for (const std::string& q : DefaultQuantifierLexicon().entries()) CHECK(vocab.Contains(q));

  // The shipped vocabulary file is exactly the generated one.
  Vocab shipped = Vocab::Load(std::filesystem::path(FINEVL_DEFAULT_RESOURCE_DIR) / "toy_vocab.txt");
  CHECK(shipped.tokens() == vocab.tokens());
}

TEST_CASE("every expressible caption has a rewrite candidate and substitutes tokenize") {
  if (!HaveRealWordNet()) return;
  const WordNetGraph& g = RealWordNet();
  const QuantifierLexicon& q = DefaultQuantifierLexicon();
  Vocab vocab = BuildToyVocab();
  std::vector<ToyScene> scenes = AllScenes();
  for (const ToyScene& s : scenes) {
    CHECK_FALSE(SelectRewriteCandidates(TagSentence(s.caption, g, q), g, q).empty());
  }
  size_t unk = 0;
  for (size_t i = 0; i < 1000; ++i) {
    RewriteResult r = RewriteSentence(scenes[i * 7 % scenes.size()].caption, g, q, i);
    TokenSeq seq = Tokenize(r.rewritten_text(), vocab);
    unk += static_cast<size_t>(std::count(seq.ids.begin(), seq.ids.end(), vocab.unk_id()));
  }
  CHECK(unk == 0);
}

TEST_CASE("encode_pair properties") {
  Vocab vocab = BuildToyVocab();
  ToyModel model = ToyModel::Create(SmallConfig(vocab), 5);
  TokenSeq seq = Tokenize("two red dogs and one blue car", vocab);
  std::vector<ToyObject> objs = {{0, 0, 2}, {2, 1, 1}};

  SUBCASE("deterministic to the bit") {
    PairEncoding a = EncodePair(model, objs, seq);
    PairEncoding b = EncodePair(model, objs, seq);
    CHECK(a.fused == b.fused);
    CHECK(a.text_feature == b.text_feature);
    CHECK(a.match_logits == b.match_logits);
  }
  SUBCASE("[CLS] representations are unit norm") {
    PairEncoding e = EncodePair(model, objs, seq);
    CHECK(e.image_feature.norm() == doctest::Approx(1.0));
    CHECK(e.text_feature.norm() == doctest::Approx(1.0));
    for (Eigen::Index i = 0; i < e.token_projections.rows(); ++i) {
      CHECK(e.token_projections.row(i).norm() == doctest::Approx(1.0));
    }
  }
  SUBCASE("image [CLS] is invariant to visual token order") {
    std::vector<ToyObject> swapped = {objs[1], objs[0]};
    PairEncoding a = EncodePair(model, objs, seq);
    PairEncoding b = EncodePair(model, swapped, seq);
    CHECK((a.image_feature - b.image_feature).norm() < 1e-12);
  }
  SUBCASE("zero embeddings make every similarity equal") {
    for (const char* name : {"tok_emb", "pos_emb", "shape_emb", "color_emb", "count_emb"}) {
      model.params[name].setZero();
    }
    std::vector<ToyScene> scenes = GenerateToyCorpus(1, 1, 6).eval;
    std::vector<double> sims;
    for (const ToyScene& t : scenes) {
      for (const ToyScene& im : scenes) {
        PairEncoding e = EncodePair(model, im.objects, Tokenize(t.caption, vocab));
        sims.push_back(e.text_feature.dot(e.image_feature));
      }
    }
    for (double s : sims) CHECK(s == doctest::Approx(sims.front()).epsilon(1e-12));
  }
  SUBCASE("out-of-vocabulary ids are rejected") {
    TokenSeq bad = seq;
    bad.ids[1] = static_cast<int>(vocab.size());
    try {
      EncodePair(model, objs, bad);
      FAIL("expected VocabMismatch");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::kVocabMismatch);
    }
  }
}

TEST_CASE("checkpoint round trip") {
  Vocab vocab = BuildToyVocab();
  ToyModel model = ToyModel::Create(SmallConfig(vocab), 9);
  const auto path = std::filesystem::temp_directory_path() / "finevl_toy_checkpoint_test.json";
  model.Save(path, R"({"seed": 9})");
  ToyModel back = ToyModel::Load(path);
  CHECK(back.params == model.params);
  CHECK(back.momentum == model.momentum);
  CHECK(back.config.vocab_size == model.config.vocab_size);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(ToyModel::Load(path), Error);
}

TEST_CASE("tape step loss agrees with the extended-precision reference") {
  Vocab vocab = BuildToyVocab();
  ToyModel model = ToyModel::Create(SmallConfig(vocab), 2);
  BatchPlan plan = PlanFor(model, vocab, GenerateToyCorpus(3, 1, 4).eval, 4);
  StepOptions opts;
  ParamSet grads;
  LossBundle b = ComputeStepLoss(model, plan, opts, &grads);
  CHECK(b.itc.has_value());
  CHECK(b.rlm.has_value());
  CHECK(static_cast<double>(ReferenceStepLoss(model, plan, opts)) == doctest::Approx(b.total).epsilon(1e-10));
  CHECK(grads.size() == model.params.size());
}

TEST_CASE("composite model gradient passes finite differences") {
  for (uint64_t seed = 0; seed < 5; ++seed) {
    GradCheckRow row = RunToyModelGradCheck(seed);
    CHECK(row.passed);
    CHECK(row.max_rel_error < kGradCheckTolerance);
  }
}

TEST_CASE("a disabled loss removes exactly its gradient contribution") {
  Vocab vocab = BuildToyVocab();
  ToyModel model = ToyModel::Create(SmallConfig(vocab), 6);
  model.params["rlm_w"].setConstant(0.1);  // give the RLM head a live gradient path
  BatchPlan plan = PlanFor(model, vocab, GenerateToyCorpus(8, 1, 4).eval, 5);
  StepOptions all;
  ParamSet g_all;
  ComputeStepLoss(model, plan, all, &g_all);
  const char* names[] = {"ritc", "ritm", "rlm"};
  for (int k = 0; k < 3; ++k) {
    CAPTURE(names[k]);
    StepOptions without = all, only;
    only.switches = {false, false, false, false, false};
    bool* off[] = {&without.switches.ritc, &without.switches.ritm, &without.switches.rlm};
    bool* on[] = {&only.switches.ritc, &only.switches.ritm, &only.switches.rlm};
    *off[k] = false;
    *on[k] = true;
    ParamSet g_without, g_only;
    LossBundle b_without = ComputeStepLoss(model, plan, without, &g_without);
    ComputeStepLoss(model, plan, only, &g_only);
    // Parameter delta of one plain gradient step differs by exactly -lr * g_component.
    for (const auto& [name, g] : g_all) {
      CHECK((g - g_without.at(name) - g_only.at(name)).cwiseAbs().maxCoeff() < 1e-10);
    }
    const std::optional<double>* absent[] = {&b_without.ritc, &b_without.ritm, &b_without.rlm};
    CHECK_FALSE(absent[k]->has_value());
  }
  StepOptions no_rlm = all;
  no_rlm.switches.rlm = false;
  ParamSet g;
  LossBundle b = ComputeStepLoss(model, plan, no_rlm, &g);
  CHECK(b.total == doctest::Approx(*b.itc + *b.ritc + *b.ritm + *b.mlm));
  CHECK(g.at("rlm_w").isZero());
  CHECK(g.at("rlm_b").isZero());
}

TEST_CASE("recall-then-rerank ranking") {
  const size_t n = 30;
  SUBCASE("identity similarity gives perfect recall") {
    RetrievalMetrics m = RankRetrieval(Matrix::Identity(n, n), 16, [](size_t, size_t) { return 0.5; });
    CHECK(m.r1_i2t == 1.0);
    CHECK(m.r1_t2i == 1.0);
  }
  SUBCASE("exhaustive recall cannot lose the partner") {
    Rng rng(1);
    Matrix sim(n, n);
    for (Eigen::Index i = 0; i < sim.size(); ++i) sim(i) = rng.Uniform();
    RetrievalMetrics m = RankRetrieval(sim, n, [](size_t t, size_t i) { return t == i ? 1.0 : 0.0; });
    CHECK(m.r1_i2t == 1.0);
    CHECK(m.r1_t2i == 1.0);
    // A shortlist that excludes partners caps recall at stage-1 quality.
    RetrievalMetrics s = RankRetrieval(-Matrix::Identity(n, n), 10, [](size_t t, size_t i) { return t == i ? 1.0 : 0.0; });
    CHECK(s.r10_i2t == 0.0);
  }
  SUBCASE("random scores retrieve at chance") {
    double r1 = 0.0;
    const int runs = 50;
    for (int run = 0; run < runs; ++run) {
      Rng rng(100 + static_cast<uint64_t>(run));
      Matrix sim(200, 200), match(200, 200);
      for (Eigen::Index i = 0; i < sim.size(); ++i) sim(i) = rng.Uniform();
      for (Eigen::Index i = 0; i < match.size(); ++i) match(i) = rng.Uniform();
      RetrievalMetrics m = RankRetrieval(sim, 16, [&](size_t t, size_t i) {
        return match(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(i));
      });
      r1 += (m.r1_i2t + m.r1_t2i) / 2.0;
    }
    r1 /= runs;
    // 1/200 with a 4-sigma band for 100 query sets of 200.
    CHECK(r1 > 0.005 - 4 * 0.0005);
    CHECK(r1 < 0.005 + 4 * 0.0005);
  }
}

TEST_CASE("replaced-position argmax") {
  Eigen::VectorXd oracle = Eigen::VectorXd::Zero(8);
  oracle(4) = 1.0;
  CHECK(PickReplacedPosition(oracle, 1) == 4);
  // Uniform logits over 5 valid positions hit a fixed target 1/5 of the time.
  Eigen::VectorXd flat = Eigen::VectorXd::Zero(7);
  size_t hits = 0;
  const size_t trials = 20000;
  for (size_t s = 0; s < trials; ++s) {
    size_t p = PickReplacedPosition(flat, s);
    CHECK(p >= 1);
    CHECK(p <= 5);
    hits += p == 3;
  }
  CHECK(static_cast<double>(hits) / trials == doctest::Approx(0.2).epsilon(0.06));
  CHECK_THROWS_AS(PickReplacedPosition(Eigen::VectorXd::Zero(2), 0), Error);
}

TEST_CASE("untrained models evaluate at chance") {
  if (!HaveRealWordNet()) return;
  Vocab vocab = BuildToyVocab();
  ToyModel model = ToyModel::Create(SmallConfig(vocab), 12);
  std::vector<ToyScene> eval = GenerateToyCorpus(12, 1, 200).eval;
  RlmEvalResult r = EvalRlm(model, eval, vocab, RealWordNet(), DefaultQuantifierLexicon(), 77);
  CHECK(r.scored + r.skipped == eval.size());
  CHECK(std::abs(r.accuracy - r.chance) < 0.1);
  RetrievalMetrics m = EvalRetrieval(model, eval, vocab, 16);
  CHECK(m.r1_i2t < 0.05);
  CHECK(m.r1_t2i < 0.05);

  // A model too short for some captions skips the truncated targets.
  ModelConfig short_cfg = SmallConfig(vocab);
  short_cfg.max_length = 6;
  ToyModel short_model = ToyModel::Create(short_cfg, 12);
  RlmEvalResult s = EvalRlm(short_model, eval, vocab, RealWordNet(), DefaultQuantifierLexicon(), 77);
  CHECK(s.skipped > 0);
  CHECK(s.scored + s.skipped == eval.size());
}

TEST_CASE("train_run contracts") {
  if (!HaveRealWordNet()) return;
  TrainConfig c;
  c.n_train = 64;
  c.n_eval = 20;
  c.epochs = 2;
  c.batch_size = 16;
  c.queue_capacity = 32;
  c.d_model = 8;
  c.d_proj = 4;

  SUBCASE("identical configs give identical timelines") {
    TrainResult a = TrainRun(c, RealWordNet(), DefaultQuantifierLexicon());
    TrainResult b = TrainRun(c, RealWordNet(), DefaultQuantifierLexicon());
    REQUIRE(a.timeline.size() == 2);
    for (size_t e = 0; e < 2; ++e) CHECK(EpochMetricsJson(a.timeline[e]) == EpochMetricsJson(b.timeline[e]));
    CHECK(a.model.params == b.model.params);
    CHECK(a.timeline[1].r1_i2t.has_value());
    CHECK_FALSE(a.timeline[0].r1_i2t.has_value());
  }
  SUBCASE("learning rate zero freezes the model") {
    c.learning_rate = 0.0;
    c.epochs = 1;
    TrainResult r = TrainRun(c, RealWordNet(), DefaultQuantifierLexicon());
    ModelConfig mc = r.model.config;
    ToyModel init = ToyModel::Create(mc, c.seed);
    CHECK(r.model.params == init.params);
    for (const auto& [name, m] : init.momentum) CHECK((r.model.momentum.at(name) - m).cwiseAbs().maxCoeff() < 1e-15);
  }
  SUBCASE("--no-rlm reports the component as absent") {
    c.no_rlm = true;
    c.epochs = 1;
    TrainResult r = TrainRun(c, RealWordNet(), DefaultQuantifierLexicon());
    const EpochMetrics& m = r.timeline[0];
    CHECK_FALSE(m.rlm.has_value());
    CHECK(m.ritc.has_value());
    CHECK(EpochMetricsJson(m).find("\"rlm\":null") != std::string::npos);
  }
  SUBCASE("invalid configs are rejected") {
    c.batch_size = 1;
    CHECK_THROWS_AS(TrainRun(c, RealWordNet(), DefaultQuantifierLexicon()), Error);
  }
}
