#ifndef FINEVL_TOYMODEL_H_
#define FINEVL_TOYMODEL_H_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "finevl/gradcheck.h"
#include "finevl/linguistics.h"
#include "finevl/losses.h"
#include "finevl/tokenizer.h"
#include "finevl/wordnet.h"

namespace finevl {

// ---------------------------------------------------------------------------
// Micro-world corpus

// Shape nouns, colour adjectives and count words of the micro-world.
const std::vector<std::string>& ToyShapes();
const std::vector<std::string>& ToyColors();
const std::vector<std::string>& ToyCounts();  // "one", "two", "three"

// One visual token: `count` objects of one shape and colour.
struct ToyObject {
  int shape = 0;
  int color = 0;
  int count = 1;  // 1..3
  bool operator==(const ToyObject&) const = default;
};

struct ToyScene {
  std::vector<ToyObject> objects;  // distinct shapes, in caption order
  std::string caption;
};

// "two red dogs and one blue car".
std::string CaptionFor(const std::vector<ToyObject>& objects);

struct ToyCorpus {
  std::vector<ToyScene> train;
  std::vector<ToyScene> eval;
};

// Scenes hold one or two object groups. Eval captions are unique and never
// occur in the training split. Throws Error{kInvalidArgument} for empty
// splits or an eval size beyond the number of distinct scenes.
ToyCorpus GenerateToyCorpus(uint64_t seed, size_t n_train, size_t n_eval);

// Drops each word with probability `rate`, always keeping at least one.
std::string NoisyCaption(const std::string& caption, double rate, uint64_t seed);

// Specials, punctuation, the micro-world words, every default quantifier,
// plural suffixes, digits and single letters (plain and "##"), so any
// WordNet substitute tokenizes without [UNK].
Vocab BuildToyVocab();

// ---------------------------------------------------------------------------
// Model

using ParamSet = std::map<std::string, Matrix>;

struct ModelConfig {
  int d_model = 32;
  int d_proj = 16;
  size_t max_length = kDefaultMaxLength;
  size_t vocab_size = 0;
  int num_shapes = 0;
  int num_colors = 0;
  int num_counts = 3;
  double init_temperature = 0.07;
  double init_scale = 0.3;  // std of embedding tables
};

// Names of the uni-modal parameters that have a momentum copy.
const std::vector<std::string>& MomentumParamNames();

struct ToyModel {
  ModelConfig config;
  ParamSet params;
  ParamSet momentum;  // copies of MomentumParamNames()

  // Random initialization; the replaced-token head starts at zero.
  static ToyModel Create(const ModelConfig& config, uint64_t seed);

  size_t num_parameters() const;

  // Self-describing JSON: config echo plus named arrays. A non-empty
  // `train_config_json` object is embedded as the training config echo.
  void Save(const std::filesystem::path& path, const std::string& train_config_json = "") const;
  // Throws Error{kMissingFile, kParseError}.
  static ToyModel Load(const std::filesystem::path& path);
};

// Uni-modal and multimodal outputs for one (scene, text) pair.
struct PairEncoding {
  Matrix image_states;       // objects × d_model
  Matrix text_states;        // L × d_model
  Eigen::RowVectorXd image_feature;  // unit norm, d_proj
  Eigen::RowVectorXd text_feature;   // unit norm, d_proj
  Matrix token_projections;  // L × d_proj, unit rows
  Matrix fused;              // L × d_model
  Eigen::RowVector2d match_logits;
  Eigen::VectorXd rlm_logits;  // L
};

// Throws Error{kVocabMismatch} for ids outside the model's vocabulary and
// Error{kInvalidArgument} for an empty object list.
PairEncoding EncodePair(const ToyModel& model, const std::vector<ToyObject>& objects, const TokenSeq& seq);

// ---------------------------------------------------------------------------
// One optimization step, with every random choice fixed up front.

struct SamplePlan {
  std::vector<ToyObject> objects;
  std::vector<int> text_ids;       // T
  std::vector<int> masked_ids;     // T̄
  std::vector<int> mlm_labels;
  std::vector<int> rewritten_ids;  // T̂; empty when rewriting failed
  std::optional<RlmTarget> rlm_target;
};

struct BatchPlan {
  std::vector<SamplePlan> samples;
  HardNegatives negatives;
  Matrix image_candidates;  // (N + queue) × d_proj, momentum batch first
  Matrix text_candidates;
};

struct LossSwitches {
  bool itc = true;
  bool ritc = true;
  bool ritm = true;
  bool mlm = true;
  bool rlm = true;
};

struct StepOptions {
  double margin = 0.2;
  bool ritc_paper_sign = false;
  LossSwitches switches;
};

// Evaluates the total loss of `plan` and, when `gradients` is non-null,
// fills it with d(total)/d(param) for every parameter.
LossBundle ComputeStepLoss(const ToyModel& model, const BatchPlan& plan, const StepOptions& options,
                           ParamSet* gradients);

// The same loss evaluated in extended precision without gradients.
long double ReferenceStepLoss(const ToyModel& model, const BatchPlan& plan, const StepOptions& options);

// Finite-difference check of the composite loss over every parameter of a
// tiny model at a random non-degenerate point.
GradCheckRow RunToyModelGradCheck(uint64_t seed, double h = 1e-5, double tolerance = kGradCheckTolerance);

// ---------------------------------------------------------------------------
// Training and evaluation

enum class OptimizerKind { kSgd, kAdamW };

struct TrainConfig {
  uint64_t seed = 0;
  size_t n_train = 2000;
  size_t n_eval = 200;
  size_t epochs = 30;
  double learning_rate = 3e-3;
  OptimizerKind optimizer = OptimizerKind::kAdamW;
  double weight_decay = 0.02;
  size_t batch_size = 32;
  size_t queue_capacity = 256;
  double margin = 0.2;
  double init_temperature = 0.07;
  double momentum = 0.995;
  double noisy_fraction = 0.8;  // leading share of epochs on noisy captions
  double noise_rate = 0.1;      // word dropout rate of the noisy split
  bool no_ritc = false;
  bool no_ritm = false;
  bool no_rlm = false;
  bool no_hsr = false;
  bool hsr_random_word = false;
  bool ritc_paper_sign = false;
  size_t k_recall = 16;
  size_t eval_every = 0;  // 0: evaluate after the final epoch only
  int d_model = 32;
  int d_proj = 16;
  size_t max_length = kDefaultMaxLength;

  // Throws Error{kInvalidArgument}.
  void Validate() const;
  LossSwitches switches() const;
};

// The config as a JSON object string.
std::string TrainConfigJson(const TrainConfig& config);

struct EpochMetrics {
  size_t epoch = 0;  // 1-based
  size_t step = 0;   // optimizer steps taken so far
  std::optional<double> itc, ritc, ritm, mlm, rlm;
  double total = 0.0;
  std::optional<double> r1_i2t, r1_t2i, rlm_acc;
};

// One metrics JSONL record; absent values are null.
std::string EpochMetricsJson(const EpochMetrics& metrics);

struct RetrievalMetrics {
  double r1_i2t = 0, r5_i2t = 0, r10_i2t = 0;
  double r1_t2i = 0, r5_t2i = 0, r10_t2i = 0;
};

struct RlmEvalResult {
  double accuracy = 0.0;
  double chance = 0.0;  // mean of 1 / valid length over scored samples
  size_t scored = 0;
  size_t skipped = 0;  // no rewrite or replaced word truncated
};

struct TrainResult {
  ToyModel model;
  std::vector<EpochMetrics> timeline;
  RetrievalMetrics retrieval;
  RlmEvalResult rlm;
};

// Ranks candidates for every query of an n × n problem: stage 1 orders all
// candidates by `sim(text, image)`, stage 2 re-orders the top `k_recall` by
// `match(text, image)`. Ties keep the lower index first. The true partner of
// query i is candidate i.
RetrievalMetrics RankRetrieval(const Matrix& sim, size_t k_recall,
                               const std::function<double(size_t text, size_t image)>& match);

// Argmax of `logits` over positions 1 .. size-2 with ties broken uniformly
// at random from `seed`.
size_t PickReplacedPosition(const Eigen::VectorXd& logits, uint64_t seed);

// Two-stage recall-then-rerank retrieval: rank all candidates by uni-modal
// feature similarity, then re-rank the top `k_recall` by match probability.
RetrievalMetrics EvalRetrieval(const ToyModel& model, const std::vector<ToyScene>& scenes, const Vocab& vocab,
                               size_t k_recall);

// Rewrites each caption with a held-out seed and scores the argmax of the
// replaced-token head (ties broken at random) against the target.
RlmEvalResult EvalRlm(const ToyModel& model, const std::vector<ToyScene>& scenes, const Vocab& vocab,
                      const WordNetGraph& graph, const QuantifierLexicon& quantifiers, uint64_t seed,
                      bool random_word = false);

// Seed of the held-out rewrite stream TrainRun evaluates RLM with.
uint64_t EvalRlmSeed(uint64_t train_seed);

// Runs the full schedule. `on_epoch` (optional) sees each epoch's metrics
// as soon as they are final.
TrainResult TrainRun(const TrainConfig& config, const WordNetGraph& graph, const QuantifierLexicon& quantifiers,
                     const std::function<void(const EpochMetrics&)>& on_epoch = nullptr);

}  // namespace finevl

#endif  // FINEVL_TOYMODEL_H_
