#include "finevl/losses.h"

#include <algorithm>
#include <cmath>
#include <limits>

#include "finevl/error.h"
#include "finevl/rng.h"

namespace finevl {
namespace {

std::string Shape(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

void CheckRowsNormalized(const Matrix& m, const char* name, double tolerance) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    double norm = m.row(i).norm();
    if (std::abs(norm - 1.0) > tolerance) {
      throw Error(Errc::kNonNormalizedInput, std::string(name) + " row " + std::to_string(i) +
                                                 " has norm " + std::to_string(norm));
    }
  }
}

// Row-wise softmax, stabilized by the row maximum.
Matrix SoftmaxRows(const Matrix& logits) {
  Matrix p = logits;
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    double mx = p.row(i).maxCoeff();
    p.row(i) = (p.row(i).array() - mx).exp();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

struct Direction {
  double loss = 0.0;
  Matrix d_anchor;
  Matrix d_candidates;
  double d_log_temperature = 0.0;
};

// Mean cross-entropy of anchor i against candidate i among all candidates.
Direction InfoNce(const Matrix& anchors, const Matrix& candidates, double log_temperature) {
  const double inv_tau = std::exp(-log_temperature);
  const double n = static_cast<double>(anchors.rows());
  Matrix logits = anchors * candidates.transpose() * inv_tau;
  Matrix p = SoftmaxRows(logits);
  Direction d;
  for (Eigen::Index i = 0; i < anchors.rows(); ++i) d.loss -= std::log(p(i, i));
  d.loss /= n;
  Matrix d_logits = p;
  for (Eigen::Index i = 0; i < anchors.rows(); ++i) d_logits(i, i) -= 1.0;
  d_logits /= n;
  d.d_anchor = d_logits * candidates * inv_tau;
  d.d_candidates = d_logits.transpose() * anchors * inv_tau;
  // logits = dot · exp(−θ), so ∂logits/∂θ = −logits.
  d.d_log_temperature = -(d_logits.array() * logits.array()).sum();
  return d;
}

// Lowest-index minimum over valid positions of `tokens · v`.
std::pair<double, size_t> MinDot(const Vector& v, const Matrix& tokens, const std::vector<bool>& valid,
                                 const char* name) {
  if (static_cast<size_t>(tokens.rows()) != valid.size()) {
    throw Error(Errc::kDimensionMismatch, std::string(name) + " has " + std::to_string(tokens.rows()) +
                                              " rows but mask length " + std::to_string(valid.size()));
  }
  double best = std::numeric_limits<double>::infinity();
  size_t arg = valid.size();
  for (size_t i = 0; i < valid.size(); ++i) {
    if (!valid[i]) continue;
    double g = tokens.row(static_cast<Eigen::Index>(i)).dot(v);
    if (g < best) {
      best = g;
      arg = i;
    }
  }
  if (arg == valid.size()) throw Error(Errc::kNoValidTokens, std::string(name) + " has no valid position");
  return {best, arg};
}

size_t SampleExcluding(const Eigen::VectorXd& scores, size_t exclude, Rng& rng) {
  double mx = -std::numeric_limits<double>::infinity();
  for (Eigen::Index k = 0; k < scores.size(); ++k) {
    if (static_cast<size_t>(k) != exclude) mx = std::max(mx, scores(k));
  }
  std::vector<double> w(static_cast<size_t>(scores.size()), 0.0);
  double total = 0.0;
  for (size_t k = 0; k < w.size(); ++k) {
    if (k == exclude) continue;
    w[k] = std::exp(scores(static_cast<Eigen::Index>(k)) - mx);
    total += w[k];
  }
  double u = rng.Uniform() * total;
  size_t last = exclude;
  for (size_t k = 0; k < w.size(); ++k) {
    if (k == exclude) continue;
    last = k;
    if (u < w[k]) return k;
    u -= w[k];
  }
  return last;  // roundoff at the top end
}

}  // namespace

void LossConfig::Validate() const {
  if (!(temperature > 0.0)) throw Error(Errc::kInvalidArgument, "temperature must be positive");
  if (!(margin >= 0.0)) throw Error(Errc::kInvalidArgument, "margin must be non-negative");
  if (!(momentum > 0.0 && momentum < 1.0)) throw Error(Errc::kInvalidArgument, "momentum must lie in (0, 1)");
  if (batch_size == 0) throw Error(Errc::kInvalidArgument, "batch size must be positive");
}

MomentumQueue::MomentumQueue(size_t capacity, size_t dim)
    : capacity_(capacity), dim_(dim), buffer_(Matrix::Zero(static_cast<Eigen::Index>(capacity),
                                                            static_cast<Eigen::Index>(dim))) {}

void MomentumQueue::Push(const Matrix& batch, double norm_tolerance) {
  if (batch.rows() > 0 && static_cast<size_t>(batch.cols()) != dim_) {
    throw Error(Errc::kShapeMismatch, "queue of dim " + std::to_string(dim_) + " got batch " + Shape(batch));
  }
  CheckRowsNormalized(batch, "queue batch", norm_tolerance);
  if (capacity_ == 0) return;
  for (Eigen::Index i = 0; i < batch.rows(); ++i) {
    buffer_.row(static_cast<Eigen::Index>(cursor_)) = batch.row(i);
    cursor_ = (cursor_ + 1) % capacity_;
    size_ = std::min(size_ + 1, capacity_);
  }
}

Matrix MomentumQueue::Contents() const {
  Matrix out(static_cast<Eigen::Index>(size_), static_cast<Eigen::Index>(dim_));
  size_t start = size_ < capacity_ ? 0 : cursor_;
  for (size_t k = 0; k < size_; ++k) {
    out.row(static_cast<Eigen::Index>(k)) = buffer_.row(static_cast<Eigen::Index>((start + k) % capacity_));
  }
  return out;
}

void MomentumQueue::Clear() {
  size_ = 0;
  cursor_ = 0;
}

ItcResult ItcLoss(const Matrix& text, const Matrix& image, const Matrix& image_candidates,
                  const Matrix& text_candidates, double log_temperature, double norm_tolerance) {
  const Eigen::Index n = text.rows();
  const Eigen::Index d = text.cols();
  if (n == 0 || image.rows() != n || image.cols() != d || image_candidates.cols() != d ||
      text_candidates.cols() != d || image_candidates.rows() < n || text_candidates.rows() < n) {
    throw Error(Errc::kDimensionMismatch, "text " + Shape(text) + ", image " + Shape(image) +
                                              ", image candidates " + Shape(image_candidates) +
                                              ", text candidates " + Shape(text_candidates));
  }
  CheckRowsNormalized(text, "text", norm_tolerance);
  CheckRowsNormalized(image, "image", norm_tolerance);
  CheckRowsNormalized(image_candidates, "image candidates", norm_tolerance);
  CheckRowsNormalized(text_candidates, "text candidates", norm_tolerance);

  Direction t2i = InfoNce(text, image_candidates, log_temperature);
  Direction i2t = InfoNce(image, text_candidates, log_temperature);
  ItcResult r;
  r.text_to_image = t2i.loss;
  r.image_to_text = i2t.loss;
  r.loss = t2i.loss + i2t.loss;
  r.d_text = std::move(t2i.d_anchor);
  r.d_image_candidates = std::move(t2i.d_candidates);
  r.d_image = std::move(i2t.d_anchor);
  r.d_text_candidates = std::move(i2t.d_candidates);
  r.d_log_temperature = t2i.d_log_temperature + i2t.d_log_temperature;
  return r;
}

ItcResult ItcLoss(const Matrix& text, const Matrix& image, const Matrix& momentum_text,
                  const Matrix& momentum_image, const MomentumQueue& text_queue,
                  const MomentumQueue& image_queue, double log_temperature) {
  auto stack = [](const Matrix& top, const Matrix& bottom) {
    if (bottom.rows() == 0) return top;
    if (top.cols() != bottom.cols()) {
      throw Error(Errc::kDimensionMismatch, "batch " + Shape(top) + " vs queue " + Shape(bottom));
    }
    Matrix m(top.rows() + bottom.rows(), top.cols());
    m << top, bottom;
    return m;
  };
  return ItcLoss(text, image, stack(momentum_image, image_queue.Contents()),
                 stack(momentum_text, text_queue.Contents()), log_temperature);
}

RitcResult RitcLoss(const Vector& image_cls, const Matrix& tokens, const Matrix& rewritten_tokens,
                    const std::vector<bool>& valid, const std::vector<bool>& rewritten_valid,
                    double margin, bool paper_sign) {
  if (tokens.cols() != image_cls.size() || rewritten_tokens.cols() != image_cls.size()) {
    throw Error(Errc::kDimensionMismatch, "image dim " + std::to_string(image_cls.size()) + ", tokens " +
                                              Shape(tokens) + ", rewritten " + Shape(rewritten_tokens));
  }
  RitcResult r;
  std::tie(r.min_g, r.argmin_g) = MinDot(image_cls, tokens, valid, "original text");
  std::tie(r.min_g_hat, r.argmin_g_hat) = MinDot(image_cls, rewritten_tokens, rewritten_valid, "rewritten text");
  r.d_image_cls = Vector::Zero(image_cls.size());
  r.d_tokens = Matrix::Zero(tokens.rows(), tokens.cols());
  r.d_rewritten_tokens = Matrix::Zero(rewritten_tokens.rows(), rewritten_tokens.cols());

  // Corrected form: the ground-truth lower bound should beat the rewritten
  // one by the margin. The printed form swaps the roles.
  const double sign = paper_sign ? -1.0 : 1.0;
  const double hinge = margin + sign * (r.min_g_hat - r.min_g);
  if (hinge <= 0.0) return r;
  r.active = true;
  r.loss = hinge;
  const auto a = static_cast<Eigen::Index>(r.argmin_g);
  const auto b = static_cast<Eigen::Index>(r.argmin_g_hat);
  r.d_image_cls = sign * (rewritten_tokens.row(b).transpose() - tokens.row(a).transpose());
  r.d_rewritten_tokens.row(b) = sign * image_cls.transpose();
  r.d_tokens.row(a) = -sign * image_cls.transpose();
  return r;
}

HardNegatives SampleHardNegatives(const Matrix& sim, uint64_t seed) {
  if (sim.rows() != sim.cols()) {
    throw Error(Errc::kDimensionMismatch, "similarity matrix must be square, got " + Shape(sim));
  }
  const auto n = static_cast<size_t>(sim.rows());
  if (n < 2) throw Error(Errc::kBatchTooSmall, "hard negatives need a batch of at least 2");
  Rng rng(seed);
  HardNegatives out;
  for (size_t j = 0; j < n; ++j) {
    out.text_for_image.push_back(SampleExcluding(sim.col(static_cast<Eigen::Index>(j)), j, rng));
  }
  for (size_t i = 0; i < n; ++i) {
    out.image_for_text.push_back(
        SampleExcluding(sim.row(static_cast<Eigen::Index>(i)).transpose(), i, rng));
  }
  return out;
}

RitmResult RitmLoss(const Matrix& positive_logits, const Matrix& hard_negative_logits,
                    const Matrix& rewritten_logits) {
  const Matrix* blocks[] = {&positive_logits, &hard_negative_logits, &rewritten_logits};
  Eigen::Index total = 0;
  for (const Matrix* m : blocks) {
    if (m->rows() > 0 && m->cols() != 2) {
      throw Error(Errc::kDimensionMismatch, "matching logits must have 2 columns, got " + Shape(*m));
    }
    total += m->rows();
  }
  if (total == 0) throw Error(Errc::kDimensionMismatch, "no matching logits");

  RitmResult r;
  Matrix* grads[] = {&r.d_positive, &r.d_hard_negative, &r.d_rewritten};
  const int labels[] = {kMatchLabel, kMismatchLabel, kMismatchLabel};
  for (int k = 0; k < 3; ++k) {
    const Matrix& logits = *blocks[k];
    if (logits.rows() == 0) {
      *grads[k] = Matrix::Zero(0, 2);
      continue;
    }
    Matrix p = SoftmaxRows(logits);
    for (Eigen::Index i = 0; i < p.rows(); ++i) r.loss -= std::log(p(i, labels[k]));
    p.col(labels[k]).array() -= 1.0;
    *grads[k] = p / static_cast<double>(total);
  }
  r.loss /= static_cast<double>(total);
  return r;
}

MlmResult MlmLoss(const Matrix& logits, const std::vector<int>& labels) {
  if (static_cast<size_t>(logits.rows()) != labels.size()) {
    throw Error(Errc::kDimensionMismatch, "logits " + Shape(logits) + " vs " + std::to_string(labels.size()) +
                                              " labels");
  }
  MlmResult r;
  r.d_logits = Matrix::Zero(logits.rows(), logits.cols());
  std::vector<Eigen::Index> rows;
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == kIgnoreLabel) continue;
    if (labels[i] < 0 || labels[i] >= logits.cols()) {
      throw Error(Errc::kInvalidTarget, "label " + std::to_string(labels[i]) + " outside vocabulary of " +
                                            std::to_string(logits.cols()));
    }
    rows.push_back(static_cast<Eigen::Index>(i));
  }
  r.num_labeled = rows.size();
  if (rows.empty()) {
    r.no_masked_positions = true;
    return r;
  }
  const double n = static_cast<double>(rows.size());
  for (Eigen::Index i : rows) {
    Matrix p = SoftmaxRows(logits.row(i));
    int y = labels[static_cast<size_t>(i)];
    r.loss -= std::log(p(0, y));
    p(0, y) -= 1.0;
    r.d_logits.row(i) = p / n;
  }
  r.loss /= n;
  return r;
}

RlmResult RlmLoss(const Vector& position_logits, const RlmTarget& target, const std::vector<bool>& valid) {
  const auto l = static_cast<size_t>(position_logits.size());
  if (valid.size() != l || target.length != l) {
    throw Error(Errc::kDimensionMismatch, std::to_string(l) + " logits, mask of " + std::to_string(valid.size()) +
                                              ", target length " + std::to_string(target.length));
  }
  if (target.position >= l || !valid[target.position]) {
    throw Error(Errc::kInvalidTarget, "target position " + std::to_string(target.position) + " is not a valid position");
  }
  double mx = -std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < l; ++i) {
    if (valid[i]) mx = std::max(mx, position_logits(static_cast<Eigen::Index>(i)));
  }
  Vector p = Vector::Zero(position_logits.size());
  double z = 0.0;
  for (size_t i = 0; i < l; ++i) {
    if (!valid[i]) continue;
    auto k = static_cast<Eigen::Index>(i);
    p(k) = std::exp(position_logits(k) - mx);
    z += p(k);
  }
  p /= z;
  RlmResult r;
  auto t = static_cast<Eigen::Index>(target.position);
  r.loss = -std::log(p(t));
  r.d_logits = p;
  r.d_logits(t) -= 1.0;
  return r;
}

void LossBundle::Accumulate(const std::string& name, const Matrix& grad) {
  auto [it, inserted] = gradients.try_emplace(name, grad);
  if (inserted) return;
  if (it->second.rows() != grad.rows() || it->second.cols() != grad.cols()) {
    throw Error(Errc::kShapeMismatch, "gradient \"" + name + "\" is " + Shape(it->second) + ", got " + Shape(grad));
  }
  it->second += grad;
}

LossBundle TotalLoss(const LossComponents& c) {
  LossBundle b;
  b.itc = c.itc;
  b.ritc = c.ritc;
  b.ritm = c.ritm;
  b.mlm = c.mlm;
  b.rlm = c.rlm;
  for (const auto& part : {c.itc, c.ritc, c.ritm, c.mlm, c.rlm}) {
    if (part) b.total += *part;
  }
  return b;
}

void MomentumUpdate(const Matrix& params, Matrix& momentum, double m) {
  if (params.rows() != momentum.rows() || params.cols() != momentum.cols()) {
    throw Error(Errc::kShapeMismatch, "params " + Shape(params) + " vs momentum " + Shape(momentum));
  }
  if (!(m >= 0.0 && m <= 1.0)) throw Error(Errc::kInvalidArgument, "momentum coefficient outside [0, 1]");
  if (m == 1.0) return;
  if (m == 0.0) {
    momentum = params;
    return;
  }
  momentum = m * momentum + (1.0 - m) * params;
}

FiniteDiffReport FiniteDiffCheck(const std::function<long double(const Vector&)>& f, const Vector& x,
                                 const Vector& analytic, double h) {
  if (analytic.size() != x.size()) {
    throw Error(Errc::kDimensionMismatch, "gradient of size " + std::to_string(analytic.size()) +
                                              " for input of size " + std::to_string(x.size()));
  }
  FiniteDiffReport rep;
  Vector probe = x;
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    const double hi = x(k) + h;
    const double lo = x(k) - h;
    probe(k) = hi;
    long double up = f(probe);
    probe(k) = lo;
    long double down = f(probe);
    probe(k) = x(k);
    // Divide by the step actually taken after rounding x ± h.
    auto numeric = static_cast<double>((up - down) / static_cast<long double>(hi - lo));
    double denom = std::max({std::abs(analytic(k)), std::abs(numeric), 1e-8});
    double err = std::abs(analytic(k) - numeric) / denom;
    if (k == 0 || err > rep.max_rel_error) {
      rep.max_rel_error = err;
      rep.worst_index = static_cast<size_t>(k);
      rep.worst_analytic = analytic(k);
      rep.worst_numeric = numeric;
    }
  }
  return rep;
}

Vector Flatten(const std::vector<const Matrix*>& parts) {
  Eigen::Index total = 0;
  for (const Matrix* m : parts) total += m->size();
  Vector flat(total);
  Eigen::Index offset = 0;
  for (const Matrix* m : parts) {
    flat.segment(offset, m->size()) = m->reshaped();
    offset += m->size();
  }
  return flat;
}

void Unflatten(const Vector& flat, const std::vector<Matrix*>& parts) {
  Eigen::Index offset = 0;
  for (Matrix* m : parts) {
    if (offset + m->size() > flat.size()) throw Error(Errc::kDimensionMismatch, "flat vector too short");
    m->reshaped() = flat.segment(offset, m->size());
    offset += m->size();
  }
  if (offset != flat.size()) throw Error(Errc::kDimensionMismatch, "flat vector too long");
}

}  // namespace finevl
