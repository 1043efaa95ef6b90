#ifndef FINEVL_SRC_TOY_FORWARD_H_
#define FINEVL_SRC_TOY_FORWARD_H_

// The toy model's forward pass and step loss, written once against an
// "Ops" backend: TapeOps records a differentiable tape over doubles,
// EvalOps<T> computes values only in scalar type T.

#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "finevl/autodiff.h"
#include "finevl/error.h"
#include "finevl/losses.h"
#include "finevl/toymodel.h"
#include "reference_losses.h"

namespace finevl::toy {

// Every position except the leading [CLS] and trailing [SEP].
inline std::vector<bool> InteriorMask(size_t length) {
  std::vector<bool> valid(length, true);
  if (length > 0) valid.front() = false;
  if (length > 1) valid.back() = false;
  return valid;
}

inline std::vector<int> Iota(size_t n) {
  std::vector<int> v(n);
  for (size_t i = 0; i < n; ++i) v[i] = static_cast<int>(i);
  return v;
}

class TapeOps {
 public:
  using V = Tape::Var;

  // `gradients`, when given, receives d(root)/d(param) after Backward().
  TapeOps(const ParamSet& params, ParamSet* gradients) : params_(params), gradients_(gradients) {}

  Tape& tape() { return tape_; }

  V Param(const std::string& name) {
    auto it = cache_.find(name);
    if (it != cache_.end()) return it->second;
    auto p = params_.find(name);
    if (p == params_.end()) throw Error(Errc::kInvalidArgument, "unknown parameter " + name);
    Matrix* sink = nullptr;
    if (gradients_) {
      Matrix& g = (*gradients_)[name];
      if (g.rows() != p->second.rows() || g.cols() != p->second.cols()) g = Matrix::Zero(p->second.rows(), p->second.cols());
      sink = &g;
    }
    V v = tape_.Leaf(p->second, sink);
    cache_.emplace(name, v);
    return v;
  }

  V MatMul(V a, V b) { return tape_.MatMul(a, b); }
  V MatMulT(V a, V b) { return tape_.MatMulT(a, b); }
  V Add(V a, V b) { return tape_.Add(a, b); }
  V AddRow(V a, V row) { return tape_.AddRow(a, row); }
  V Scale(V a, double s) { return tape_.Scale(a, s); }
  V Gather(V table, const std::vector<int>& rows) { return tape_.Gather(table, rows); }
  V MeanRows(V a) { return tape_.MeanRows(a); }
  V ConcatRows(const std::vector<V>& parts) { return tape_.ConcatRows(parts); }
  V SoftmaxRows(V a) { return tape_.SoftmaxRows(a); }
  V Gelu(V a) { return tape_.Gelu(a); }
  V NormalizeRows(V a) { return tape_.NormalizeRows(a); }
  V Sum(const std::vector<V>& scalars) { return tape_.Sum(scalars); }
  Matrix ValueOf(V v) const { return tape_.value(v); }
  double Scalar(V v) const { return tape_.value(v)(0, 0); }

  V Itc(V text, V image, const Matrix& image_cands, const Matrix& text_cands, V log_tau) {
    ItcResult r = ItcLoss(tape_.value(text), tape_.value(image), image_cands, text_cands, tape_.value(log_tau)(0, 0));
    return tape_.Custom({text, image, log_tau}, r.loss,
                        {r.d_text, r.d_image, Matrix::Constant(1, 1, r.d_log_temperature)});
  }

  V Ritc(V image_cls, V tokens, V rewritten, const std::vector<bool>& valid, const std::vector<bool>& rewritten_valid,
         double margin, bool paper_sign) {
    Vector cls = tape_.value(image_cls).row(0).transpose();
    RitcResult r = RitcLoss(cls, tape_.value(tokens), tape_.value(rewritten), valid, rewritten_valid, margin, paper_sign);
    return tape_.Custom({image_cls, tokens, rewritten}, r.loss,
                        {r.d_image_cls.transpose(), r.d_tokens, r.d_rewritten_tokens});
  }

  V Ritm(const std::vector<V>& pos, const std::vector<V>& neg, const std::vector<V>& rew) {
    std::vector<V> inputs;
    Matrix blocks[3];
    const std::vector<V>* parts[3] = {&pos, &neg, &rew};
    for (int b = 0; b < 3; ++b) {
      blocks[b] = Matrix(0, 2);
      if (parts[b]->empty()) continue;
      V cat = tape_.ConcatRows(*parts[b]);
      blocks[b] = tape_.value(cat);
      inputs.push_back(cat);
    }
    RitmResult r = RitmLoss(blocks[0], blocks[1], blocks[2]);
    std::vector<Matrix> grads;
    const Matrix* d[3] = {&r.d_positive, &r.d_hard_negative, &r.d_rewritten};
    for (int b = 0; b < 3; ++b) {
      if (!parts[b]->empty()) grads.push_back(*d[b]);
    }
    return tape_.Custom(inputs, r.loss, std::move(grads));
  }

  V Mlm(V logits, const std::vector<int>& labels) {
    MlmResult r = MlmLoss(tape_.value(logits), labels);
    return tape_.Custom({logits}, r.loss, {r.d_logits});
  }

  V Rlm(V logits, const RlmTarget& target, const std::vector<bool>& valid) {
    RlmResult r = RlmLoss(tape_.value(logits).col(0), target, valid);
    return tape_.Custom({logits}, r.loss, {Matrix(r.d_logits)});
  }

 private:
  const ParamSet& params_;
  ParamSet* gradients_;
  Tape tape_;
  std::map<std::string, V> cache_;
};

template <typename T>
class EvalOps {
 public:
  using V = reference::Mat<T>;

  explicit EvalOps(const ParamSet& params) : params_(params) {}

  const V& Param(const std::string& name) {
    auto it = cache_.find(name);
    if (it != cache_.end()) return it->second;
    auto p = params_.find(name);
    if (p == params_.end()) throw Error(Errc::kInvalidArgument, "unknown parameter " + name);
    return cache_.emplace(name, p->second.template cast<T>()).first->second;
  }

  V MatMul(const V& a, const V& b) { return a * b; }
  V MatMulT(const V& a, const V& b) { return a * b.transpose(); }
  V Add(const V& a, const V& b) { return a + b; }
  V AddRow(const V& a, const V& row) { return a.rowwise() + row.row(0); }
  V Scale(const V& a, double s) { return a * static_cast<T>(s); }
  V Gather(const V& table, const std::vector<int>& rows) {
    V out(static_cast<Eigen::Index>(rows.size()), table.cols());
    for (size_t k = 0; k < rows.size(); ++k) {
      if (rows[k] < 0 || rows[k] >= table.rows()) throw Error(Errc::kShapeMismatch, "gather row out of range");
      out.row(static_cast<Eigen::Index>(k)) = table.row(rows[k]);
    }
    return out;
  }
  V MeanRows(const V& a) { return a.colwise().mean(); }
  V ConcatRows(const std::vector<V>& parts) {
    Eigen::Index rows = 0;
    for (const V& p : parts) rows += p.rows();
    V out(rows, parts.front().cols());
    Eigen::Index off = 0;
    for (const V& p : parts) {
      out.middleRows(off, p.rows()) = p;
      off += p.rows();
    }
    return out;
  }
  V SoftmaxRows(const V& a) {
    V p = a;
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
      p.row(i) = (p.row(i).array() - p.row(i).maxCoeff()).exp();
      p.row(i) /= p.row(i).sum();
    }
    return p;
  }
  V Gelu(const V& a) {
    return a.unaryExpr([](T x) { return T(0.5) * x * (T(1) + std::erf(x / std::sqrt(T(2)))); });
  }
  V NormalizeRows(const V& a) {
    V out = a;
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
      T n = a.row(i).norm();
      out.row(i) /= std::max(n, static_cast<T>(Tape::kNormFloor));
    }
    return out;
  }
  V Sum(const std::vector<V>& scalars) {
    T total = 0;
    for (const V& s : scalars) total += s(0, 0);
    return Scalar1(total);
  }
  Matrix ValueOf(const V& v) const { return v.template cast<double>(); }
  T Scalar(const V& v) const { return v(0, 0); }

  V Itc(const V& text, const V& image, const Matrix& image_cands, const Matrix& text_cands, const V& log_tau) {
    return Scalar1(reference::Itc<T>(text, image, image_cands.cast<T>(), text_cands.cast<T>(), log_tau(0, 0)));
  }
  V Ritc(const V& image_cls, const V& tokens, const V& rewritten, const std::vector<bool>& valid,
         const std::vector<bool>& rewritten_valid, double margin, bool paper_sign) {
    return Scalar1(
        reference::Ritc<T>(image_cls, tokens, rewritten, valid, rewritten_valid, static_cast<T>(margin), paper_sign));
  }
  V Ritm(const std::vector<V>& pos, const std::vector<V>& neg, const std::vector<V>& rew) {
    auto cat = [&](const std::vector<V>& parts) { return parts.empty() ? V(0, 2) : ConcatRows(parts); };
    return Scalar1(reference::Ritm<T>(cat(pos), cat(neg), cat(rew)));
  }
  V Mlm(const V& logits, const std::vector<int>& labels) { return Scalar1(reference::Mlm<T>(logits, labels)); }
  V Rlm(const V& logits, const RlmTarget& target, const std::vector<bool>& valid) {
    return Scalar1(reference::Rlm<T>(logits, target.position, valid));
  }

 private:
  static V Scalar1(T v) { return V::Constant(1, 1, v); }

  const ParamSet& params_;
  std::map<std::string, V> cache_;
};

// Encoders and heads over a backend. Parameter names are fixed by
// ToyModel::Create.
template <class Ops>
class Forward {
 public:
  using V = typename Ops::V;

  Forward(Ops& ops, const ModelConfig& config) : ops_(ops), config_(config) {}

  // Uni-modal text states, L × d: x + gelu(x W + b) with x = token + position.
  V TextStates(const std::vector<int>& ids) {
    for (int id : ids) {
      if (id < 0 || static_cast<size_t>(id) >= config_.vocab_size) {
        throw Error(Errc::kVocabMismatch, "token id " + std::to_string(id) + " outside a vocabulary of " +
                                              std::to_string(config_.vocab_size));
      }
    }
    if (ids.size() > config_.max_length) {
      throw Error(Errc::kVocabMismatch, "sequence of " + std::to_string(ids.size()) + " exceeds model length " +
                                            std::to_string(config_.max_length));
    }
    V x = ops_.Add(ops_.Gather(ops_.Param("tok_emb"), ids), ops_.Gather(ops_.Param("pos_emb"), Iota(ids.size())));
    return Residual(x, "text_w", "text_b");
  }

  // Uni-modal visual states, one row per object group.
  V ImageStates(const std::vector<ToyObject>& objects) {
    if (objects.empty()) throw Error(Errc::kInvalidArgument, "scene without objects");
    std::vector<int> shapes, colors, counts;
    for (const ToyObject& o : objects) {
      if (o.shape < 0 || o.shape >= config_.num_shapes || o.color < 0 || o.color >= config_.num_colors ||
          o.count < 1 || o.count > config_.num_counts) {
        throw Error(Errc::kInvalidArgument, "object outside the model's symbol tables");
      }
      shapes.push_back(o.shape);
      colors.push_back(o.color);
      counts.push_back(o.count - 1);
    }
    V x = ops_.Add(ops_.Add(ops_.Gather(ops_.Param("shape_emb"), shapes), ops_.Gather(ops_.Param("color_emb"), colors)),
                   ops_.Gather(ops_.Param("count_emb"), counts));
    return Residual(x, "vis_w", "vis_b");
  }

  // Mean-pooled [CLS] representations through the projection heads.
  V ImageFeature(const V& image_states) {
    return ops_.NormalizeRows(ops_.MatMul(ops_.MeanRows(image_states), ops_.Param("proj_v")));
  }
  V TextFeature(const V& text_states) {
    return ops_.NormalizeRows(ops_.MatMul(ops_.MeanRows(text_states), ops_.Param("proj_w")));
  }
  V TokenProjections(const V& text_states) { return ops_.NormalizeRows(ops_.MatMul(text_states, ops_.Param("proj_w"))); }

  // Self-attention over text, cross-attention into [null; visual states],
  // then a feed-forward layer, each residual.
  V Fuse(const V& text_states, const V& image_states) {
    V z = ops_.Add(text_states, Attention(text_states, text_states, "sa"));
    V memory = ops_.ConcatRows({ops_.Param("ca_null"), image_states});
    z = ops_.Add(z, Attention(z, memory, "ca"));
    V hidden = ops_.Gelu(ops_.AddRow(ops_.MatMul(z, ops_.Param("ffn_w1")), ops_.Param("ffn_b1")));
    return ops_.Add(z, ops_.AddRow(ops_.MatMul(hidden, ops_.Param("ffn_w2")), ops_.Param("ffn_b2")));
  }

  V MatchLogits(const V& fused) {
    return ops_.AddRow(ops_.MatMul(ops_.MeanRows(fused), ops_.Param("itm_w")), ops_.Param("itm_b"));
  }
  V MlmLogits(const V& fused) { return ops_.AddRow(ops_.MatMul(fused, ops_.Param("mlm_w")), ops_.Param("mlm_b")); }
  V RlmLogits(const V& fused) { return ops_.AddRow(ops_.MatMul(fused, ops_.Param("rlm_w")), ops_.Param("rlm_b")); }

 private:
  V Residual(const V& x, const char* w, const char* b) {
    return ops_.Add(x, ops_.Gelu(ops_.AddRow(ops_.MatMul(x, ops_.Param(w)), ops_.Param(b))));
  }

  V Attention(const V& queries, const V& memory, const std::string& prefix) {
    V q = ops_.MatMul(queries, ops_.Param(prefix + "_q"));
    V k = ops_.MatMul(memory, ops_.Param(prefix + "_k"));
    V v = ops_.MatMul(memory, ops_.Param(prefix + "_v"));
    V weights = ops_.SoftmaxRows(ops_.Scale(ops_.MatMulT(q, k), 1.0 / std::sqrt(static_cast<double>(config_.d_model))));
    return ops_.MatMul(ops_.MatMul(weights, v), ops_.Param(prefix + "_o"));
  }

  Ops& ops_;
  const ModelConfig& config_;
};

template <class Ops>
struct StepValues {
  std::optional<typename Ops::V> itc, ritc, ritm, mlm, rlm;
  typename Ops::V total;
};

// The summed objective over one planned batch. Components whose switch is
// off, or that have no eligible sample, are absent.
template <class Ops>
StepValues<Ops> StepLoss(Ops& ops, const ModelConfig& config, const BatchPlan& plan, const StepOptions& options) {
  using V = typename Ops::V;
  const LossSwitches& sw = options.switches;
  const size_t n = plan.samples.size();
  if (n == 0) throw Error(Errc::kBatchTooSmall, "empty batch");
  Forward<Ops> fwd(ops, config);

  std::vector<V> images, texts, image_feats, text_feats;
  std::vector<std::optional<V>> rewritten(n);
  for (const SamplePlan& s : plan.samples) {
    images.push_back(fwd.ImageStates(s.objects));
    texts.push_back(fwd.TextStates(s.text_ids));
  }
  StepValues<Ops> out;

  if (sw.itc) {
    for (size_t i = 0; i < n; ++i) {
      image_feats.push_back(fwd.ImageFeature(images[i]));
      text_feats.push_back(fwd.TextFeature(texts[i]));
    }
    out.itc = ops.Itc(ops.ConcatRows(text_feats), ops.ConcatRows(image_feats), plan.image_candidates,
                      plan.text_candidates, ops.Param("log_tau"));
  }

  auto has_rewrite = [&](size_t i) { return !plan.samples[i].rewritten_ids.empty(); };
  for (size_t i = 0; i < n; ++i) {
    if (has_rewrite(i) && (sw.ritc || sw.ritm || sw.rlm)) rewritten[i] = fwd.TextStates(plan.samples[i].rewritten_ids);
  }

  if (sw.ritc) {
    std::vector<V> terms;
    for (size_t i = 0; i < n; ++i) {
      if (!rewritten[i]) continue;
      V cls = image_feats.empty() ? fwd.ImageFeature(images[i]) : image_feats[i];
      terms.push_back(ops.Ritc(cls, fwd.TokenProjections(texts[i]), fwd.TokenProjections(*rewritten[i]),
                               InteriorMask(plan.samples[i].text_ids.size()),
                               InteriorMask(plan.samples[i].rewritten_ids.size()), options.margin,
                               options.ritc_paper_sign));
    }
    if (!terms.empty()) out.ritc = ops.Scale(ops.Sum(terms), 1.0 / static_cast<double>(terms.size()));
  }

  // The rewritten pair's fused states feed both RITM and RLM.
  std::vector<std::optional<V>> rewritten_fused(n);
  for (size_t i = 0; i < n; ++i) {
    if (rewritten[i] && (sw.ritm || (sw.rlm && plan.samples[i].rlm_target))) {
      rewritten_fused[i] = fwd.Fuse(*rewritten[i], images[i]);
    }
  }

  if (sw.ritm) {
    std::vector<V> pos, neg, rew;
    for (size_t i = 0; i < n; ++i) pos.push_back(fwd.MatchLogits(fwd.Fuse(texts[i], images[i])));
    const HardNegatives& hn = plan.negatives;
    for (size_t j = 0; j < hn.text_for_image.size(); ++j) {
      neg.push_back(fwd.MatchLogits(fwd.Fuse(texts[hn.text_for_image[j]], images[j])));
    }
    for (size_t i = 0; i < hn.image_for_text.size(); ++i) {
      neg.push_back(fwd.MatchLogits(fwd.Fuse(texts[i], images[hn.image_for_text[i]])));
    }
    for (size_t i = 0; i < n; ++i) {
      if (rewritten_fused[i]) rew.push_back(fwd.MatchLogits(*rewritten_fused[i]));
    }
    out.ritm = ops.Ritm(pos, neg, rew);
  }

  if (sw.mlm) {
    std::vector<V> logits;
    std::vector<int> labels;
    for (size_t i = 0; i < n; ++i) {
      const SamplePlan& s = plan.samples[i];
      bool any = false;
      for (int l : s.mlm_labels) any = any || l != kIgnoreLabel;
      if (!any) continue;
      logits.push_back(fwd.MlmLogits(fwd.Fuse(fwd.TextStates(s.masked_ids), images[i])));
      labels.insert(labels.end(), s.mlm_labels.begin(), s.mlm_labels.end());
    }
    if (!logits.empty()) out.mlm = ops.Mlm(ops.ConcatRows(logits), labels);
  }

  if (sw.rlm) {
    std::vector<V> terms;
    for (size_t i = 0; i < n; ++i) {
      const SamplePlan& s = plan.samples[i];
      if (!rewritten_fused[i] || !s.rlm_target) continue;
      terms.push_back(ops.Rlm(fwd.RlmLogits(*rewritten_fused[i]), *s.rlm_target, InteriorMask(s.rewritten_ids.size())));
    }
    if (!terms.empty()) out.rlm = ops.Scale(ops.Sum(terms), 1.0 / static_cast<double>(terms.size()));
  }

  std::vector<V> present;
  for (const auto* c : {&out.itc, &out.ritc, &out.ritm, &out.mlm, &out.rlm}) {
    if (*c) present.push_back(**c);
  }
  if (present.empty()) throw Error(Errc::kInvalidArgument, "every loss component is disabled");
  out.total = ops.Sum(present);
  return out;
}

}  // namespace finevl::toy

#endif  // FINEVL_SRC_TOY_FORWARD_H_
