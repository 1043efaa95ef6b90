#include "finevl/toymodel.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_set>

#include "json.hpp"

#include "finevl/error.h"
#include "finevl/rewriter.h"
#include "finevl/rng.h"
#include "toy_forward.h"

namespace finevl {
namespace {

using json = nlohmann::json;

// Stream ordinals for DeriveSeed.
constexpr uint64_t kCorpusStream = 1;
constexpr uint64_t kTrainStream = 2;
constexpr uint64_t kEvalRlmStream = 3;
constexpr uint64_t kShuffleStream = 4;
constexpr uint64_t kInitStream = 5;

constexpr double kMinTemperature = 0.001;
constexpr double kMaxTemperature = 0.5;
constexpr double kTwoGroupProbability = 0.75;

const std::vector<std::string>& ToyPlurals() {
  static const std::vector<std::string> plurals = {"dogs", "cats", "cars", "trucks",
                                                   "balls", "boxes", "cups", "apples"};
  return plurals;
}

size_t DistinctSceneCount() {
  const size_t s = ToyShapes().size();
  const size_t groups = ToyColors().size() * ToyCounts().size();
  return s * groups + s * (s - 1) / 2 * groups * groups;
}

ToyScene RandomScene(Rng& rng) {
  const size_t groups = rng.Bernoulli(kTwoGroupProbability) ? 2 : 1;
  std::vector<int> shapes;
  while (shapes.size() < groups) {
    int s = static_cast<int>(rng.Below(ToyShapes().size()));
    if (std::find(shapes.begin(), shapes.end(), s) == shapes.end()) shapes.push_back(s);
  }
  // Canonical order: one caption per multiset of groups.
  std::sort(shapes.begin(), shapes.end());
  ToyScene scene;
  for (int s : shapes) {
    ToyObject o;
    o.shape = s;
    o.color = static_cast<int>(rng.Below(ToyColors().size()));
    o.count = 1 + static_cast<int>(rng.Below(ToyCounts().size()));
    scene.objects.push_back(o);
  }
  scene.caption = CaptionFor(scene.objects);
  return scene;
}

std::vector<std::string> SplitSpaces(const std::string& text) {
  std::istringstream in(text);
  std::vector<std::string> words;
  for (std::string w; in >> w;) words.push_back(w);
  return words;
}

Matrix RandomMatrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double stddev) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.Normal(0.0, stddev);
  }
  return m;
}

json MatrixToJson(const Matrix& m) {
  std::vector<double> data;
  data.reserve(static_cast<size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) data.push_back(m(i, j));
  }
  return json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
}

Matrix MatrixFromJson(const json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto& data = j.at("data");
  if (rows < 0 || cols < 0 || data.size() != static_cast<size_t>(rows * cols)) {
    throw Error(Errc::kParseError, "checkpoint array size does not match its shape");
  }
  Matrix m(rows, cols);
  size_t k = 0;
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index jj = 0; jj < cols; ++jj) m(i, jj) = data[k++].get<double>();
  }
  return m;
}

json ParamsToJson(const ParamSet& params) {
  json out = json::object();
  for (const auto& [name, m] : params) out[name] = MatrixToJson(m);
  return out;
}

ParamSet ParamsFromJson(const json& j) {
  ParamSet out;
  for (const auto& [name, value] : j.items()) out[name] = MatrixFromJson(value);
  return out;
}

// Uni-modal [CLS] features of a set of (objects, ids) pairs.
struct Features {
  Matrix text;
  Matrix image;
};

Features UnimodalFeatures(const ParamSet& params, const ModelConfig& config,
                          const std::vector<const std::vector<ToyObject>*>& objects,
                          const std::vector<const std::vector<int>*>& ids) {
  toy::EvalOps<double> ops(params);
  toy::Forward<toy::EvalOps<double>> fwd(ops, config);
  Features f{Matrix(static_cast<Eigen::Index>(ids.size()), config.d_proj),
             Matrix(static_cast<Eigen::Index>(objects.size()), config.d_proj)};
  for (size_t i = 0; i < ids.size(); ++i) f.text.row(static_cast<Eigen::Index>(i)) = fwd.TextFeature(fwd.TextStates(*ids[i]));
  for (size_t i = 0; i < objects.size(); ++i) {
    f.image.row(static_cast<Eigen::Index>(i)) = fwd.ImageFeature(fwd.ImageStates(*objects[i]));
  }
  return f;
}

double MatchProbability(const Eigen::RowVector2d& logits) {
  return 1.0 / (1.0 + std::exp(logits(kMismatchLabel) - logits(kMatchLabel)));
}

}  // namespace

// ---------------------------------------------------------------------------
// Corpus

const std::vector<std::string>& ToyShapes() {
  static const std::vector<std::string> shapes = {"dog", "cat", "car", "truck", "ball", "box", "cup", "apple"};
  return shapes;
}

const std::vector<std::string>& ToyColors() {
  static const std::vector<std::string> colors = {"red", "blue", "green", "yellow", "black"};
  return colors;
}

const std::vector<std::string>& ToyCounts() {
  static const std::vector<std::string> counts = {"one", "two", "three"};
  return counts;
}

std::string CaptionFor(const std::vector<ToyObject>& objects) {
  std::string out;
  for (const ToyObject& o : objects) {
    if (o.shape < 0 || static_cast<size_t>(o.shape) >= ToyShapes().size() || o.color < 0 ||
        static_cast<size_t>(o.color) >= ToyColors().size() || o.count < 1 ||
        static_cast<size_t>(o.count) > ToyCounts().size()) {
      throw Error(Errc::kInvalidArgument, "object outside the micro-world");
    }
    if (!out.empty()) out += " and ";
    out += ToyCounts()[static_cast<size_t>(o.count - 1)] + " " + ToyColors()[static_cast<size_t>(o.color)] + " " +
           (o.count == 1 ? ToyShapes() : ToyPlurals())[static_cast<size_t>(o.shape)];
  }
  return out;
}

ToyCorpus GenerateToyCorpus(uint64_t seed, size_t n_train, size_t n_eval) {
  if (n_train == 0 || n_eval == 0) throw Error(Errc::kInvalidArgument, "corpus splits must be non-empty");
  if (n_eval > DistinctSceneCount()) {
    throw Error(Errc::kInvalidArgument, "eval split of " + std::to_string(n_eval) + " exceeds the " +
                                            std::to_string(DistinctSceneCount()) + " distinct scenes");
  }
  Rng rng(DeriveSeed(seed, kCorpusStream));
  ToyCorpus corpus;
  std::unordered_set<std::string> eval_captions;
  while (corpus.eval.size() < n_eval) {
    ToyScene s = RandomScene(rng);
    if (eval_captions.insert(s.caption).second) corpus.eval.push_back(std::move(s));
  }
  if (eval_captions.size() == DistinctSceneCount()) {
    throw Error(Errc::kInvalidArgument, "eval split leaves no scene for training");
  }
  while (corpus.train.size() < n_train) {
    ToyScene s = RandomScene(rng);
    if (!eval_captions.contains(s.caption)) corpus.train.push_back(std::move(s));
  }
  return corpus;
}

std::string NoisyCaption(const std::string& caption, double rate, uint64_t seed) {
  if (rate < 0.0 || rate >= 1.0) throw Error(Errc::kInvalidArgument, "noise rate must lie in [0, 1)");
  std::vector<std::string> words = SplitSpaces(caption);
  if (rate == 0.0 || words.empty()) return caption;
  Rng rng(seed);
  std::vector<std::string> kept;
  for (const std::string& w : words) {
    if (!rng.Bernoulli(rate)) kept.push_back(w);
  }
  if (kept.empty()) kept.push_back(words[rng.Below(words.size())]);
  std::string out;
  for (const std::string& w : kept) out += (out.empty() ? "" : " ") + w;
  return out;
}

Vocab BuildToyVocab() {
  std::vector<std::string> tokens;
  for (std::string_view t : {kPadToken, kUnkToken, kClsToken, kSepToken, kMaskToken}) tokens.emplace_back(t);
  for (const char* t : {".", ",", "-", "'"}) tokens.emplace_back(t);
  auto add = [&](const std::string& t) {
    if (std::find(tokens.begin(), tokens.end(), t) == tokens.end()) tokens.push_back(t);
  };
  for (const auto& w : ToyShapes()) add(w);
  for (const auto& w : ToyColors()) add(w);
  for (const auto& w : ToyCounts()) add(w);
  for (const auto& w : DefaultQuantifierLexicon().entries()) add(w);
  add("and");
  add("##s");
  add("##es");
  for (char c = 'a'; c <= 'z'; ++c) add(std::string(1, c));
  for (char c = 'a'; c <= 'z'; ++c) add("##" + std::string(1, c));
  for (char c = '0'; c <= '9'; ++c) add(std::string(1, c));
  for (char c = '0'; c <= '9'; ++c) add("##" + std::string(1, c));
  return Vocab::FromTokens(std::move(tokens));
}

// ---------------------------------------------------------------------------
// Model

const std::vector<std::string>& MomentumParamNames() {
  static const std::vector<std::string> names = {"tok_emb", "pos_emb",  "text_w", "text_b", "shape_emb", "color_emb",
                                                 "count_emb", "vis_w", "vis_b", "proj_v", "proj_w"};
  return names;
}

ToyModel ToyModel::Create(const ModelConfig& config, uint64_t seed) {
  if (config.d_model < 1 || config.d_proj < 1 || config.vocab_size == 0 || config.num_shapes < 1 ||
      config.num_colors < 1 || config.num_counts < 1 || config.max_length < 3 || config.init_temperature <= 0.0 ||
      config.init_scale < 0.0) {
    throw Error(Errc::kInvalidArgument, "invalid model configuration");
  }
  Rng rng(DeriveSeed(seed, kInitStream));
  const Eigen::Index d = config.d_model;
  const Eigen::Index p = config.d_proj;
  const Eigen::Index v = static_cast<Eigen::Index>(config.vocab_size);
  const double emb = config.init_scale;
  const double lin = 1.0 / std::sqrt(static_cast<double>(d));
  ToyModel m;
  m.config = config;
  auto& w = m.params;
  // Draw order is fixed so a seed always yields the same model.
  w["tok_emb"] = RandomMatrix(rng, v, d, emb);
  w["pos_emb"] = RandomMatrix(rng, static_cast<Eigen::Index>(config.max_length), d, emb);
  w["text_w"] = RandomMatrix(rng, d, d, lin);
  w["text_b"] = Matrix::Zero(1, d);
  w["shape_emb"] = RandomMatrix(rng, config.num_shapes, d, emb);
  w["color_emb"] = RandomMatrix(rng, config.num_colors, d, emb);
  w["count_emb"] = RandomMatrix(rng, config.num_counts, d, emb);
  w["vis_w"] = RandomMatrix(rng, d, d, lin);
  w["vis_b"] = Matrix::Zero(1, d);
  w["proj_v"] = RandomMatrix(rng, d, p, lin);
  w["proj_w"] = RandomMatrix(rng, d, p, lin);
  for (const char* prefix : {"sa", "ca"}) {
    for (const char* part : {"_q", "_k", "_v", "_o"}) w[std::string(prefix) + part] = RandomMatrix(rng, d, d, lin);
  }
  w["ca_null"] = RandomMatrix(rng, 1, d, emb);
  w["ffn_w1"] = RandomMatrix(rng, d, 2 * d, lin);
  w["ffn_b1"] = Matrix::Zero(1, 2 * d);
  w["ffn_w2"] = RandomMatrix(rng, 2 * d, d, lin / std::sqrt(2.0));
  w["ffn_b2"] = Matrix::Zero(1, d);
  w["itm_w"] = RandomMatrix(rng, d, 2, lin);
  w["itm_b"] = Matrix::Zero(1, 2);
  w["mlm_w"] = RandomMatrix(rng, d, v, lin);
  w["mlm_b"] = Matrix::Zero(1, v);
  w["rlm_w"] = Matrix::Zero(d, 1);
  w["rlm_b"] = Matrix::Zero(1, 1);
  w["log_tau"] = Matrix::Constant(1, 1, std::log(config.init_temperature));
  for (const std::string& name : MomentumParamNames()) m.momentum[name] = w.at(name);
  return m;
}

size_t ToyModel::num_parameters() const {
  size_t n = 0;
  for (const auto& [name, m] : params) n += static_cast<size_t>(m.size());
  return n;
}

void ToyModel::Save(const std::filesystem::path& path, const std::string& train_config_json) const {
  json j;
  j["format"] = "finevl-toy-checkpoint";
  j["version"] = 1;
  j["config"] = {{"d_model", config.d_model},
                 {"d_proj", config.d_proj},
                 {"max_length", config.max_length},
                 {"vocab_size", config.vocab_size},
                 {"num_shapes", config.num_shapes},
                 {"num_colors", config.num_colors},
                 {"num_counts", config.num_counts},
                 {"init_temperature", config.init_temperature},
                 {"init_scale", config.init_scale}};
  if (!train_config_json.empty()) j["train_config"] = json::parse(train_config_json);
  j["params"] = ParamsToJson(params);
  j["momentum"] = ParamsToJson(momentum);
  std::ofstream out(path);
  if (!out) throw Error(Errc::kMissingFile, "cannot write " + path.string());
  out << j.dump() << '\n';
}

ToyModel ToyModel::Load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::kMissingFile, "cannot read " + path.string());
  try {
    json j = json::parse(in);
    if (j.value("format", "") != "finevl-toy-checkpoint") throw Error(Errc::kParseError, "not a toy checkpoint");
    ToyModel m;
    const json& c = j.at("config");
    m.config.d_model = c.at("d_model").get<int>();
    m.config.d_proj = c.at("d_proj").get<int>();
    m.config.max_length = c.at("max_length").get<size_t>();
    m.config.vocab_size = c.at("vocab_size").get<size_t>();
    m.config.num_shapes = c.at("num_shapes").get<int>();
    m.config.num_colors = c.at("num_colors").get<int>();
    m.config.num_counts = c.at("num_counts").get<int>();
    m.config.init_temperature = c.at("init_temperature").get<double>();
    m.config.init_scale = c.at("init_scale").get<double>();
    m.params = ParamsFromJson(j.at("params"));
    m.momentum = ParamsFromJson(j.at("momentum"));
    // Shapes must agree with a freshly created model of the same config.
    ToyModel fresh = Create(m.config, 0);
    auto check = [](const ParamSet& ref, const ParamSet& got) {
      if (ref.size() != got.size()) throw Error(Errc::kParseError, "checkpoint parameter set differs");
      for (const auto& [name, r] : ref) {
        auto it = got.find(name);
        if (it == got.end() || it->second.rows() != r.rows() || it->second.cols() != r.cols()) {
          throw Error(Errc::kParseError, "checkpoint parameter " + name + " missing or misshapen");
        }
      }
    };
    check(fresh.params, m.params);
    check(fresh.momentum, m.momentum);
    return m;
  } catch (const json::exception& e) {
    throw Error(Errc::kParseError, path.string() + ": " + e.what());
  }
}

PairEncoding EncodePair(const ToyModel& model, const std::vector<ToyObject>& objects, const TokenSeq& seq) {
  toy::EvalOps<double> ops(model.params);
  toy::Forward<toy::EvalOps<double>> fwd(ops, model.config);
  PairEncoding e;
  e.image_states = fwd.ImageStates(objects);
  e.text_states = fwd.TextStates(seq.ids);
  e.image_feature = fwd.ImageFeature(e.image_states);
  e.text_feature = fwd.TextFeature(e.text_states);
  e.token_projections = fwd.TokenProjections(e.text_states);
  e.fused = fwd.Fuse(e.text_states, e.image_states);
  e.match_logits = fwd.MatchLogits(e.fused);
  e.rlm_logits = fwd.RlmLogits(e.fused).col(0);
  return e;
}

// ---------------------------------------------------------------------------
// Step loss

LossBundle ComputeStepLoss(const ToyModel& model, const BatchPlan& plan, const StepOptions& options,
                           ParamSet* gradients) {
  if (gradients) {
    gradients->clear();
    for (const auto& [name, m] : model.params) (*gradients)[name] = Matrix::Zero(m.rows(), m.cols());
  }
  toy::TapeOps ops(model.params, gradients);
  toy::StepValues<toy::TapeOps> v = toy::StepLoss(ops, model.config, plan, options);
  LossBundle b;
  auto read = [&](const std::optional<Tape::Var>& c) -> std::optional<double> {
    if (!c) return std::nullopt;
    return ops.Scalar(*c);
  };
  b.itc = read(v.itc);
  b.ritc = read(v.ritc);
  b.ritm = read(v.ritm);
  b.mlm = read(v.mlm);
  b.rlm = read(v.rlm);
  b.total = ops.Scalar(v.total);
  if (gradients) ops.tape().Backward(v.total);
  return b;
}

long double ReferenceStepLoss(const ToyModel& model, const BatchPlan& plan, const StepOptions& options) {
  toy::EvalOps<long double> ops(model.params);
  return ops.Scalar(toy::StepLoss(ops, model.config, plan, options).total);
}

namespace {

constexpr double kKinkClearance = 1e-3;

// A batch of three samples over a tiny vocabulary; every sample carries a
// rewrite, masked positions and an RLM target so all paths are exercised.
BatchPlan RandomTinyPlan(Rng& rng, const ModelConfig& config, size_t queue) {
  constexpr int kCls = 2, kSep = 3, kMask = 4, kFirstRegular = 5;
  const int vocab = static_cast<int>(config.vocab_size);
  BatchPlan plan;
  for (int s = 0; s < 3; ++s) {
    SamplePlan sp;
    const int groups = 1 + static_cast<int>(rng.Below(2));
    for (int g = 0; g < groups; ++g) {
      sp.objects.push_back({static_cast<int>(rng.Below(static_cast<size_t>(config.num_shapes))),
                            static_cast<int>(rng.Below(static_cast<size_t>(config.num_colors))),
                            1 + static_cast<int>(rng.Below(static_cast<size_t>(config.num_counts)))});
    }
    const size_t len = 5 + rng.Below(config.max_length - 4);
    auto regular = [&] { return kFirstRegular + static_cast<int>(rng.Below(static_cast<size_t>(vocab - kFirstRegular))); };
    sp.text_ids.push_back(kCls);
    for (size_t i = 2; i < len; ++i) sp.text_ids.push_back(regular());
    sp.text_ids.push_back(kSep);
    sp.masked_ids = sp.text_ids;
    sp.mlm_labels.assign(len, kIgnoreLabel);
    const size_t forced = 1 + rng.Below(len - 2);
    for (size_t i = 1; i + 1 < len; ++i) {
      if (i != forced && !rng.Bernoulli(0.3)) continue;
      sp.mlm_labels[i] = sp.text_ids[i];
      sp.masked_ids[i] = rng.Bernoulli(0.5) ? kMask : regular();
    }
    sp.rewritten_ids = sp.text_ids;
    int sub = regular();
    while (sub == sp.text_ids[forced]) sub = regular();
    sp.rewritten_ids[forced] = sub;
    sp.rlm_target = RlmTarget{forced, len};
    plan.samples.push_back(std::move(sp));
  }
  Matrix sim = RandomMatrix(rng, 3, 3, 1.0);
  plan.negatives = SampleHardNegatives(sim, rng.Next());
  auto unit_rows = [&](Eigen::Index rows) {
    Matrix m = RandomMatrix(rng, rows, config.d_proj, 1.0);
    return Matrix(m.rowwise().normalized());
  };
  plan.image_candidates = unit_rows(static_cast<Eigen::Index>(3 + queue));
  plan.text_candidates = unit_rows(static_cast<Eigen::Index>(3 + queue));
  return plan;
}

// True when every RITC term sits away from its hinge and argmin ties.
bool RitcIsSmooth(const ToyModel& model, const BatchPlan& plan, double margin) {
  toy::EvalOps<double> ops(model.params);
  toy::Forward<toy::EvalOps<double>> fwd(ops, model.config);
  for (const SamplePlan& s : plan.samples) {
    if (s.rewritten_ids.empty()) continue;
    Matrix cls = fwd.ImageFeature(fwd.ImageStates(s.objects));
    auto interior_sorted = [&](const std::vector<int>& ids) {
      Matrix tok = fwd.TokenProjections(fwd.TextStates(ids));
      std::vector<double> g;
      for (Eigen::Index k = 1; k + 1 < tok.rows(); ++k) g.push_back(tok.row(k).dot(cls.row(0)));
      std::sort(g.begin(), g.end());
      return g;
    };
    std::vector<double> g = interior_sorted(s.text_ids);
    std::vector<double> gh = interior_sorted(s.rewritten_ids);
    if (g.size() > 1 && g[1] - g[0] < kKinkClearance) return false;
    if (gh.size() > 1 && gh[1] - gh[0] < kKinkClearance) return false;
    if (std::abs(margin + gh[0] - g[0]) < kKinkClearance) return false;
  }
  return true;
}

}  // namespace

GradCheckRow RunToyModelGradCheck(uint64_t seed, double h, double tolerance) {
  ModelConfig config;
  config.d_model = 4;
  config.d_proj = 3;
  config.max_length = 8;
  config.vocab_size = 12;
  config.num_shapes = 3;
  config.num_colors = 3;
  config.num_counts = 3;
  config.init_scale = 0.8;
  StepOptions options;
  constexpr size_t kQueue = 4;

  for (uint64_t attempt = 0;; ++attempt) {
    Rng rng(DeriveSeed(seed, attempt));
    ToyModel model = ToyModel::Create(config, rng.Next());
    // Non-zero heads and temperature so every parameter carries gradient.
    model.params["rlm_w"] = RandomMatrix(rng, config.d_model, 1, 0.5);
    model.params["rlm_b"] = RandomMatrix(rng, 1, 1, 0.5);
    model.params["log_tau"](0, 0) = std::log(0.05) + rng.Uniform() * (0.0 - std::log(0.05));
    for (auto& [name, m] : model.params) {
      if (name.ends_with("_b")) m = RandomMatrix(rng, m.rows(), m.cols(), 0.1);
    }
    BatchPlan plan = RandomTinyPlan(rng, config, kQueue);
    options.margin = 0.2;
    if (!RitcIsSmooth(model, plan, options.margin)) continue;

    ParamSet grads;
    ComputeStepLoss(model, plan, options, &grads);
    std::vector<const Matrix*> x_parts, g_parts;
    std::vector<Matrix*> mut_parts;
    ToyModel probe = model;
    for (auto& [name, m] : probe.params) {
      x_parts.push_back(&model.params.at(name));
      g_parts.push_back(&grads.at(name));
      mut_parts.push_back(&m);
    }
    const Vector x = Flatten(x_parts);
    const Vector analytic = Flatten(g_parts);
    FiniteDiffReport report = FiniteDiffCheck(
        [&](const Vector& point) {
          Unflatten(point, mut_parts);
          return ReferenceStepLoss(probe, plan, options);
        },
        x, analytic, h);
    GradCheckRow row;
    row.name = "toy_model";
    row.dimensions = "N=3 d=4 D=3 V=12 params=" + std::to_string(x.size());
    row.max_rel_error = report.max_rel_error;
    row.passed = report.max_rel_error < tolerance;
    return row;
  }
}

// ---------------------------------------------------------------------------
// Training

void TrainConfig::Validate() const {
  auto fail = [](const std::string& what) { throw Error(Errc::kInvalidArgument, what); };
  if (n_train == 0 || n_eval == 0) fail("n_train and n_eval must be at least 1");
  if (epochs == 0) fail("epochs must be at least 1");
  if (!(learning_rate >= 0.0)) fail("learning rate must be non-negative");
  if (!(weight_decay >= 0.0)) fail("weight decay must be non-negative");
  if (batch_size < 2) fail("batch size must be at least 2");
  if (!(margin >= 0.0)) fail("margin must be non-negative");
  if (!(init_temperature >= kMinTemperature && init_temperature <= kMaxTemperature)) {
    fail("temperature must lie in [0.001, 0.5]");
  }
  if (!(momentum >= 0.0 && momentum <= 1.0)) fail("momentum must lie in [0, 1]");
  if (!(noisy_fraction >= 0.0 && noisy_fraction <= 1.0)) fail("noisy fraction must lie in [0, 1]");
  if (!(noise_rate >= 0.0 && noise_rate < 1.0)) fail("noise rate must lie in [0, 1)");
  if (k_recall < 10) fail("k_recall must be at least 10");
  if (d_model < 1 || d_proj < 1) fail("model dimensions must be positive");
  if (max_length < 3) fail("max_length must be at least 3");
}

LossSwitches TrainConfig::switches() const {
  LossSwitches s;
  s.ritc = !no_ritc;
  s.ritm = !no_ritm;
  s.rlm = !no_rlm;
  return s;
}

std::string TrainConfigJson(const TrainConfig& c) {
  json j = {{"seed", c.seed},
            {"n_train", c.n_train},
            {"n_eval", c.n_eval},
            {"epochs", c.epochs},
            {"learning_rate", c.learning_rate},
            {"optimizer", c.optimizer == OptimizerKind::kSgd ? "sgd" : "adamw"},
            {"weight_decay", c.weight_decay},
            {"batch_size", c.batch_size},
            {"queue_capacity", c.queue_capacity},
            {"margin", c.margin},
            {"init_temperature", c.init_temperature},
            {"momentum", c.momentum},
            {"noisy_fraction", c.noisy_fraction},
            {"noise_rate", c.noise_rate},
            {"no_ritc", c.no_ritc},
            {"no_ritm", c.no_ritm},
            {"no_rlm", c.no_rlm},
            {"no_hsr", c.no_hsr},
            {"hsr_random_word", c.hsr_random_word},
            {"ritc_paper_sign", c.ritc_paper_sign},
            {"k_recall", c.k_recall},
            {"eval_every", c.eval_every},
            {"d_model", c.d_model},
            {"d_proj", c.d_proj},
            {"max_length", c.max_length}};
  return j.dump();
}

std::string EpochMetricsJson(const EpochMetrics& m) {
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  json j = {{"epoch", m.epoch},     {"step", m.step},       {"itc", opt(m.itc)},         {"ritc", opt(m.ritc)},
            {"ritm", opt(m.ritm)},  {"mlm", opt(m.mlm)},    {"rlm", opt(m.rlm)},         {"total", m.total},
            {"r1_i2t", opt(m.r1_i2t)}, {"r1_t2i", opt(m.r1_t2i)}, {"rlm_acc", opt(m.rlm_acc)}};
  return j.dump();
}

namespace {

SamplePlan PlanSample(const std::vector<ToyObject>& objects, const std::string& caption, const Vocab& vocab,
                      size_t max_length, const WordNetGraph& graph, const QuantifierLexicon& quantifiers,
                      bool hsr, bool random_word, uint64_t seed) {
  SamplePlan sp;
  sp.objects = objects;
  TokenSeq seq = Tokenize(caption, vocab, max_length);
  sp.text_ids = seq.ids;
  std::optional<TokenSpan> forced;
  if (hsr) {
    try {
      RewriteOptions ro;
      ro.random_word = random_word;
      RewriteResult r = RewriteSentence(caption, graph, quantifiers, DeriveSeed(seed, 1), ro);
      TokenSeq rewritten = Tokenize(r.rewritten_text(), vocab, max_length);
      sp.rewritten_ids = rewritten.ids;
      forced = seq.SpanOf(r.replaced_index);
      try {
        sp.rlm_target = BuildRlmTarget(rewritten, r.replaced_index);
      } catch (const Error& e) {
        if (e.code() != Errc::kSpanTruncated) throw;
      }
    } catch (const Error& e) {
      if (e.code() != Errc::kNoCandidate) throw;
    }
  }
  MaskedSeq masked = ApplyMlmMask(seq, forced, vocab, DeriveSeed(seed, 2));
  sp.masked_ids = masked.ids;
  sp.mlm_labels = masked.mlm_labels;
  return sp;
}

class Optimizer {
 public:
  Optimizer(const TrainConfig& config) : config_(config) {}

  void Step(ParamSet& params, const ParamSet& grads) {
    ++t_;
    const double lr = config_.learning_rate;
    for (auto& [name, p] : params) {
      const Matrix& g = grads.at(name);
      // Decoupled decay; the temperature is not decayed.
      if (name != "log_tau") p *= 1.0 - lr * config_.weight_decay;
      if (config_.optimizer == OptimizerKind::kSgd) {
        p -= lr * g;
        continue;
      }
      auto [it, fresh] = m_.try_emplace(name, Matrix::Zero(p.rows(), p.cols()));
      Matrix& m = it->second;
      Matrix& v = v_.try_emplace(name, Matrix::Zero(p.rows(), p.cols())).first->second;
      m = kBeta1 * m + (1.0 - kBeta1) * g;
      v = kBeta2 * v + (1.0 - kBeta2) * g.cwiseProduct(g);
      const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
      const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
      p.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + kEps);
    }
    double& log_tau = params.at("log_tau")(0, 0);
    log_tau = std::clamp(log_tau, std::log(kMinTemperature), std::log(kMaxTemperature));
  }

 private:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;
  const TrainConfig& config_;
  size_t t_ = 0;
  ParamSet m_, v_;
};

struct Running {
  double sum = 0.0;
  size_t count = 0;
  void Add(const std::optional<double>& v) {
    if (!v) return;
    sum += *v;
    ++count;
  }
  std::optional<double> Mean() const {
    if (count == 0) return std::nullopt;
    return sum / static_cast<double>(count);
  }
};

}  // namespace

RetrievalMetrics EvalRetrieval(const ToyModel& model, const std::vector<ToyScene>& scenes, const Vocab& vocab,
                               size_t k_recall) {
  if (k_recall < 10) throw Error(Errc::kInvalidArgument, "k_recall must be at least 10");
  const size_t n = scenes.size();
  RetrievalMetrics out;
  if (n == 0) return out;
  std::vector<std::vector<int>> ids;
  ids.reserve(n);
  for (const ToyScene& s : scenes) {
    ids.push_back(Tokenize(s.caption, vocab, model.config.max_length).ids);
  }

  toy::EvalOps<double> ops(model.params);
  toy::Forward<toy::EvalOps<double>> fwd(ops, model.config);
  std::vector<Matrix> text_states, image_states;
  Features f{Matrix(static_cast<Eigen::Index>(n), model.config.d_proj),
             Matrix(static_cast<Eigen::Index>(n), model.config.d_proj)};
  for (size_t i = 0; i < n; ++i) {
    text_states.push_back(fwd.TextStates(ids[i]));
    image_states.push_back(fwd.ImageStates(scenes[i].objects));
    f.text.row(static_cast<Eigen::Index>(i)) = fwd.TextFeature(text_states[i]);
    f.image.row(static_cast<Eigen::Index>(i)) = fwd.ImageFeature(image_states[i]);
  }
  const Matrix sim = f.text * f.image.transpose();  // text × image
  return RankRetrieval(sim, k_recall, [&](size_t t, size_t i) {
    return MatchProbability(fwd.MatchLogits(fwd.Fuse(text_states[t], image_states[i])));
  });
}

RetrievalMetrics RankRetrieval(const Matrix& sim, size_t k_recall,
                               const std::function<double(size_t text, size_t image)>& match) {
  if (sim.rows() != sim.cols()) throw Error(Errc::kDimensionMismatch, "retrieval needs a square similarity matrix");
  const size_t n = static_cast<size_t>(sim.rows());
  RetrievalMetrics out;
  if (n == 0) return out;
  const size_t k = std::min(k_recall, n);

  // Rank of the true partner after recall-then-rerank, 0-based.
  auto rank_of = [&](size_t query, bool image_query) {
    auto pair = [&](size_t c) { return image_query ? std::pair(c, query) : std::pair(query, c); };
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
      auto [ta, ia] = pair(a);
      auto [tb, ib] = pair(b);
      return sim(static_cast<Eigen::Index>(ta), static_cast<Eigen::Index>(ia)) >
             sim(static_cast<Eigen::Index>(tb), static_cast<Eigen::Index>(ib));
    });
    std::vector<std::pair<double, size_t>> top;
    for (size_t r = 0; r < k; ++r) {
      auto [t, i] = pair(order[r]);
      top.emplace_back(match(t, i), order[r]);
    }
    std::stable_sort(top.begin(), top.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    for (size_t r = 0; r < k; ++r) {
      if (top[r].second == query) return r;
    }
    return static_cast<size_t>(std::find(order.begin(), order.end(), query) - order.begin());
  };

  for (size_t q = 0; q < n; ++q) {
    const size_t ri = rank_of(q, true);
    const size_t rt = rank_of(q, false);
    out.r1_i2t += ri < 1;
    out.r5_i2t += ri < 5;
    out.r10_i2t += ri < 10;
    out.r1_t2i += rt < 1;
    out.r5_t2i += rt < 5;
    out.r10_t2i += rt < 10;
  }
  const double dn = static_cast<double>(n);
  for (double* v : {&out.r1_i2t, &out.r5_i2t, &out.r10_i2t, &out.r1_t2i, &out.r5_t2i, &out.r10_t2i}) *v /= dn;
  return out;
}

size_t PickReplacedPosition(const Eigen::VectorXd& logits, uint64_t seed) {
  if (logits.size() < 3) throw Error(Errc::kNoValidTokens, "no position between [CLS] and [SEP]");
  std::vector<size_t> best;
  double best_value = -std::numeric_limits<double>::infinity();
  for (size_t p = 1; p + 1 < static_cast<size_t>(logits.size()); ++p) {
    const double v = logits(static_cast<Eigen::Index>(p));
    if (v > best_value) {
      best_value = v;
      best.assign(1, p);
    } else if (v == best_value) {
      best.push_back(p);
    }
  }
  Rng tie(seed);
  return best[tie.Below(best.size())];
}

RlmEvalResult EvalRlm(const ToyModel& model, const std::vector<ToyScene>& scenes, const Vocab& vocab,
                      const WordNetGraph& graph, const QuantifierLexicon& quantifiers, uint64_t seed,
                      bool random_word) {
  RlmEvalResult out;
  size_t hits = 0;
  for (size_t i = 0; i < scenes.size(); ++i) {
    const uint64_t s = DeriveSeed(seed, i);
    RewriteOptions ro;
    ro.random_word = random_word;
    RewriteResult r;
    try {
      r = RewriteSentence(scenes[i].caption, graph, quantifiers, s, ro);
    } catch (const Error& e) {
      if (e.code() != Errc::kNoCandidate) throw;
      ++out.skipped;
      continue;
    }
    TokenSeq seq = Tokenize(r.rewritten_text(), vocab, model.config.max_length);
    RlmTarget target;
    try {
      target = BuildRlmTarget(seq, r.replaced_index);
    } catch (const Error& e) {
      if (e.code() != Errc::kSpanTruncated) throw;
      ++out.skipped;
      continue;
    }
    Eigen::VectorXd logits = EncodePair(model, scenes[i].objects, seq).rlm_logits;
    const size_t guess = PickReplacedPosition(EncodePair(model, scenes[i].objects, seq).rlm_logits, DeriveSeed(s, 1));
    hits += guess == target.position;
    out.chance += 1.0 / static_cast<double>(seq.size() - 2);
    ++out.scored;
  }
  if (out.scored > 0) {
    out.accuracy = static_cast<double>(hits) / static_cast<double>(out.scored);
    out.chance /= static_cast<double>(out.scored);
  }
  return out;
}

uint64_t EvalRlmSeed(uint64_t train_seed) { return DeriveSeed(train_seed, kEvalRlmStream); }

TrainResult TrainRun(const TrainConfig& config, const WordNetGraph& graph, const QuantifierLexicon& quantifiers,
                     const std::function<void(const EpochMetrics&)>& on_epoch) {
  config.Validate();
  const Vocab vocab = BuildToyVocab();
  const ToyCorpus corpus = GenerateToyCorpus(config.seed, config.n_train, config.n_eval);

  ModelConfig mc;
  mc.d_model = config.d_model;
  mc.d_proj = config.d_proj;
  mc.max_length = config.max_length;
  mc.vocab_size = vocab.size();
  mc.num_shapes = static_cast<int>(ToyShapes().size());
  mc.num_colors = static_cast<int>(ToyColors().size());
  mc.num_counts = static_cast<int>(ToyCounts().size());
  mc.init_temperature = config.init_temperature;

  TrainResult result;
  result.model = ToyModel::Create(mc, config.seed);
  ToyModel& model = result.model;
  Optimizer optimizer(config);
  MomentumQueue text_queue(config.queue_capacity, static_cast<size_t>(mc.d_proj));
  MomentumQueue image_queue(config.queue_capacity, static_cast<size_t>(mc.d_proj));
  StepOptions step_options;
  step_options.margin = config.margin;
  step_options.ritc_paper_sign = config.ritc_paper_sign;
  step_options.switches = config.switches();
  const size_t noisy_epochs =
      static_cast<size_t>(std::llround(config.noisy_fraction * static_cast<double>(config.epochs)));
  const uint64_t eval_rlm_seed = EvalRlmSeed(config.seed);

  size_t step = 0;
  for (size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const bool noisy = epoch < noisy_epochs;
    std::vector<size_t> order(corpus.train.size());
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle(DeriveSeed(DeriveSeed(config.seed, kShuffleStream), epoch));
    shuffle.Shuffle(order);
    const uint64_t epoch_seed = DeriveSeed(DeriveSeed(config.seed, kTrainStream), epoch);

    Running itc, ritc, ritm, mlm, rlm, total;
    for (size_t start = 0; start < order.size(); start += config.batch_size) {
      const size_t end = std::min(order.size(), start + config.batch_size);
      if (end - start < 2) break;  // a lone sample has no in-batch negative
      BatchPlan plan;
      for (size_t k = start; k < end; ++k) {
        const ToyScene& scene = corpus.train[order[k]];
        const uint64_t sample_seed = DeriveSeed(epoch_seed, order[k]);
        const std::string caption =
            noisy ? NoisyCaption(scene.caption, config.noise_rate, DeriveSeed(sample_seed, 0)) : scene.caption;
        plan.samples.push_back(PlanSample(scene.objects, caption, vocab, mc.max_length, graph, quantifiers,
                                          !config.no_hsr, config.hsr_random_word, sample_seed));
      }
      std::vector<const std::vector<ToyObject>*> objs;
      std::vector<const std::vector<int>*> ids;
      for (const SamplePlan& sp : plan.samples) {
        objs.push_back(&sp.objects);
        ids.push_back(&sp.text_ids);
      }
      const double tau = std::exp(model.params.at("log_tau")(0, 0));
      if (step_options.switches.ritm) {
        Features online = UnimodalFeatures(model.params, mc, objs, ids);
        plan.negatives = SampleHardNegatives(online.text * online.image.transpose() / tau, DeriveSeed(epoch_seed, ~start));
      }
      Features mom = UnimodalFeatures(model.momentum, mc, objs, ids);
      const Eigen::Index n = static_cast<Eigen::Index>(plan.samples.size());
      plan.image_candidates.resize(n + static_cast<Eigen::Index>(image_queue.size()), mc.d_proj);
      plan.image_candidates << mom.image, image_queue.Contents();
      plan.text_candidates.resize(n + static_cast<Eigen::Index>(text_queue.size()), mc.d_proj);
      plan.text_candidates << mom.text, text_queue.Contents();

      ParamSet grads;
      LossBundle b = ComputeStepLoss(model, plan, step_options, &grads);
      optimizer.Step(model.params, grads);
      for (const std::string& name : MomentumParamNames()) {
        MomentumUpdate(model.params.at(name), model.momentum.at(name), config.momentum);
      }
      text_queue.Push(mom.text);
      image_queue.Push(mom.image);
      ++step;

      itc.Add(b.itc);
      ritc.Add(b.ritc);
      ritm.Add(b.ritm);
      mlm.Add(b.mlm);
      rlm.Add(b.rlm);
      total.Add(b.total);
    }

    EpochMetrics m;
    m.epoch = epoch + 1;
    m.step = step;
    m.itc = itc.Mean();
    m.ritc = ritc.Mean();
    m.ritm = ritm.Mean();
    m.mlm = mlm.Mean();
    m.rlm = rlm.Mean();
    m.total = total.Mean().value_or(0.0);
    const bool last = epoch + 1 == config.epochs;
    if (last || (config.eval_every > 0 && (epoch + 1) % config.eval_every == 0)) {
      RetrievalMetrics rm = EvalRetrieval(model, corpus.eval, vocab, config.k_recall);
      RlmEvalResult rr = EvalRlm(model, corpus.eval, vocab, graph, quantifiers, eval_rlm_seed);
      m.r1_i2t = rm.r1_i2t;
      m.r1_t2i = rm.r1_t2i;
      m.rlm_acc = rr.accuracy;
      if (last) {
        result.retrieval = rm;
        result.rlm = rr;
      }
    }
    result.timeline.push_back(m);
    if (on_epoch) on_epoch(m);
  }
  return result;
}

}  // namespace finevl
