#ifndef FINEVL_LOSSES_H_
#define FINEVL_LOSSES_H_

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "finevl/tokenizer.h"

namespace finevl {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

inline constexpr double kNormTolerance = 1e-6;

struct LossConfig {
  double temperature = 0.07;  // initial value; learned as log τ
  double margin = 0.2;        // β
  size_t queue_capacity = 256;
  double momentum = 0.995;
  size_t batch_size = 32;
  // Use the printed max(0, β + min g − min ĝ) instead of the corrected form.
  bool ritc_paper_sign = false;

  // Throws Error{kInvalidArgument} when a field is out of range.
  void Validate() const;
};

// Fixed-capacity FIFO of unit vectors.
class MomentumQueue {
 public:
  MomentumQueue(size_t capacity, size_t dim);

  // Enqueues every row of `batch`, evicting the oldest entries beyond
  // capacity. Throws Error{kShapeMismatch, kNonNormalizedInput}.
  void Push(const Matrix& batch, double norm_tolerance = kNormTolerance);

  size_t capacity() const { return capacity_; }
  size_t dim() const { return dim_; }
  size_t size() const { return size_; }
  // size() × dim() rows, oldest first.
  Matrix Contents() const;
  void Clear();

 private:
  size_t capacity_;
  size_t dim_;
  size_t size_ = 0;
  size_t cursor_ = 0;  // next slot to write
  Matrix buffer_;
};

struct ItcResult {
  double loss = 0.0;
  double text_to_image = 0.0;  // L_c^t
  double image_to_text = 0.0;  // L_c^v
  Matrix d_text;
  Matrix d_image;
  Matrix d_image_candidates;
  Matrix d_text_candidates;
  double d_log_temperature = 0.0;
};

// Queue-based InfoNCE in both directions. Row i of `text` is scored against
// every row of `image_candidates` with row i as the positive, and likewise
// for `image` against `text_candidates`. Candidate matrices hold the N
// in-batch (momentum) rows first, then the queue. Returns the sum of both
// directions' mean negative log-likelihoods and all gradients.
// Throws Error{kDimensionMismatch, kNonNormalizedInput}.
ItcResult ItcLoss(const Matrix& text, const Matrix& image, const Matrix& image_candidates,
                  const Matrix& text_candidates, double log_temperature,
                  double norm_tolerance = kNormTolerance);

// Convenience form: candidates are the momentum batch followed by the queue.
ItcResult ItcLoss(const Matrix& text, const Matrix& image, const Matrix& momentum_text,
                  const Matrix& momentum_image, const MomentumQueue& text_queue,
                  const MomentumQueue& image_queue, double log_temperature);

struct RitcResult {
  double loss = 0.0;
  double min_g = 0.0;
  double min_g_hat = 0.0;
  size_t argmin_g = 0;
  size_t argmin_g_hat = 0;
  bool active = false;
  Vector d_image_cls;
  Matrix d_tokens;
  Matrix d_rewritten_tokens;
};

// g_i = <image_cls, tokens_i> over valid original positions, ĝ likewise over
// the rewritten text; loss = max(0, β + min ĝ − min g). Subgradients flow to
// the first argmin. Throws Error{kNoValidTokens, kDimensionMismatch}.
RitcResult RitcLoss(const Vector& image_cls, const Matrix& tokens, const Matrix& rewritten_tokens,
                    const std::vector<bool>& valid, const std::vector<bool>& rewritten_valid,
                    double margin, bool paper_sign = false);

struct HardNegatives {
  std::vector<size_t> text_for_image;  // entry j: text index paired with image j
  std::vector<size_t> image_for_text;  // entry i: image index paired with text i
};

// `sim(i, j)` scores text i against image j. Each anchor draws one other
// index with probability softmax(similarities) with the diagonal excluded.
// Throws Error{kBatchTooSmall, kDimensionMismatch}.
HardNegatives SampleHardNegatives(const Matrix& sim, uint64_t seed);

inline constexpr int kMismatchLabel = 0;
inline constexpr int kMatchLabel = 1;

struct RitmResult {
  double loss = 0.0;
  Matrix d_positive;
  Matrix d_hard_negative;
  Matrix d_rewritten;
};

// Mean two-class cross-entropy over every row: positives labeled match,
// hard negatives and rewritten pairs labeled mismatch. Any block may be
// empty but not all. Throws Error{kDimensionMismatch}.
RitmResult RitmLoss(const Matrix& positive_logits, const Matrix& hard_negative_logits,
                    const Matrix& rewritten_logits);

struct MlmResult {
  double loss = 0.0;
  bool no_masked_positions = false;
  size_t num_labeled = 0;
  Matrix d_logits;
};

// Mean cross-entropy over positions whose label is not kIgnoreLabel. With no
// labeled position the loss is 0, gradients are zero and the flag is set.
// Throws Error{kDimensionMismatch, kInvalidTarget}.
MlmResult MlmLoss(const Matrix& logits, const std::vector<int>& labels);

struct RlmResult {
  double loss = 0.0;
  Vector d_logits;
};

// Softmax over valid positions, loss = −log p(target.position).
// Throws Error{kDimensionMismatch, kInvalidTarget}.
RlmResult RlmLoss(const Vector& position_logits, const RlmTarget& target, const std::vector<bool>& valid);

struct LossComponents {
  std::optional<double> itc, ritc, ritm, mlm, rlm;
};

struct LossBundle {
  // Absent components were disabled and contribute nothing.
  std::optional<double> itc, ritc, ritm, mlm, rlm;
  double total = 0.0;
  std::map<std::string, Matrix> gradients;

  // Adds `grad` into gradients[name], creating it on first use.
  // Throws Error{kShapeMismatch}.
  void Accumulate(const std::string& name, const Matrix& grad);
};

// Unweighted sum of the present components, accumulated in the order
// itc, ritc, ritm, mlm, rlm.
LossBundle TotalLoss(const LossComponents& components);

// momentum ← m·momentum + (1−m)·params. Throws Error{kShapeMismatch} and
// Error{kInvalidArgument} for m outside [0, 1].
void MomentumUpdate(const Matrix& params, Matrix& momentum, double m);

struct FiniteDiffReport {
  double max_rel_error = 0.0;
  size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

// Central differences of `f` around `x`, compared to `analytic` per
// coordinate with denominator max(|analytic|, |numeric|, 1e-8). `f` may
// evaluate in extended precision; differences are taken in long double.
FiniteDiffReport FiniteDiffCheck(const std::function<long double(const Vector&)>& f, const Vector& x,
                                 const Vector& analytic, double h = 1e-5);

// Packs matrices into one flat vector and back, for gradient checks.
Vector Flatten(const std::vector<const Matrix*>& parts);
void Unflatten(const Vector& flat, const std::vector<Matrix*>& parts);

}  // namespace finevl

#endif  // FINEVL_LOSSES_H_
