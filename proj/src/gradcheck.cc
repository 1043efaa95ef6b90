#include "finevl/gradcheck.h"

#include <algorithm>
#include <cmath>
#include <limits>

#include "finevl/error.h"
#include "finevl/losses.h"
#include "finevl/rng.h"
#include "finevl/toymodel.h"
#include "reference_losses.h"

namespace finevl {
namespace {

constexpr double kNoNormCheck = std::numeric_limits<double>::infinity();
// Minimum distance from a kink (hinge or argmin switch) for a point to
// count as non-degenerate at step h.
constexpr double kKinkClearance = 1e-3;

Matrix RandomMatrix(Eigen::Index rows, Eigen::Index cols, Rng& rng, double scale = 1.0) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.Normal(0.0, scale);
  return m;
}

Matrix NormalizedRows(Matrix m) {
  m.rowwise().normalize();
  return m;
}

std::string Dims(std::initializer_list<std::pair<const char*, long>> parts) {
  std::string out;
  for (const auto& [k, v] : parts) {
    if (!out.empty()) out += " ";
    out += std::string(k) + "=" + std::to_string(v);
  }
  return out;
}

GradCheckRow Row(std::string name, std::string dims, const FiniteDiffReport& rep, double tolerance) {
  return {std::move(name), std::move(dims), rep.max_rel_error, rep.max_rel_error < tolerance};
}

// Gap between the smallest and second-smallest valid dot product.
double MinGap(const Vector& v, const Matrix& tokens, const std::vector<bool>& valid) {
  std::vector<double> dots;
  for (size_t i = 0; i < valid.size(); ++i) {
    if (valid[i]) dots.push_back(tokens.row(static_cast<Eigen::Index>(i)).dot(v));
  }
  if (dots.size() < 2) return std::numeric_limits<double>::infinity();
  std::partial_sort(dots.begin(), dots.begin() + 2, dots.end());
  return dots[1] - dots[0];
}

bool RitcNonDegenerate(const Vector& img, const Matrix& tok, const Matrix& rew, const std::vector<bool>& valid,
                       double margin) {
  RitcResult r = RitcLoss(img, tok, rew, valid, valid, margin);
  return r.loss > kKinkClearance && MinGap(img, tok, valid) > kKinkClearance &&
         MinGap(img, rew, valid) > kKinkClearance;
}

std::vector<bool> InteriorMask(size_t length) {
  std::vector<bool> valid(length, true);
  valid.front() = false;
  valid.back() = false;
  return valid;
}

// Cyclic view of a shared parameter vector: input element e of a loss reads
// theta[(offset + e) % size]. Overlapping views make the losses share
// variables, so the composite check exercises gradient accumulation.
struct View {
  Eigen::Index offset;
  Matrix Read(const Vector& theta, Eigen::Index rows, Eigen::Index cols) const {
    Matrix m(rows, cols);
    for (Eigen::Index e = 0; e < m.size(); ++e) m.data()[e] = theta((offset + e) % theta.size());
    return m;
  }
  void Scatter(const Matrix& grad, Vector& out) const {
    for (Eigen::Index e = 0; e < grad.size(); ++e) out((offset + e) % out.size()) += grad.data()[e];
  }
};

using Real = long double;
using RealMat = reference::Mat<Real>;

RealMat Ext(const Matrix& m) { return m.cast<Real>(); }

}  // namespace

std::vector<GradCheckRow> RunLossGradChecks(uint64_t seed, double h, double tolerance) {
  Rng rng(seed);
  std::vector<GradCheckRow> rows;

  {  // ITC: N=4, D=8, M=16.
    const Eigen::Index n = 4, d = 8, m = 16;
    Matrix text = NormalizedRows(RandomMatrix(n, d, rng));
    Matrix image = NormalizedRows(RandomMatrix(n, d, rng));
    Matrix image_cand = NormalizedRows(RandomMatrix(n + m, d, rng));
    Matrix text_cand = NormalizedRows(RandomMatrix(n + m, d, rng));
    Matrix log_tau = Matrix::Constant(1, 1, std::log(0.05) + rng.Uniform() * std::log(1.0 / 0.05));
    ItcResult r = ItcLoss(text, image, image_cand, text_cand, log_tau(0, 0));
    Matrix d_tau = Matrix::Constant(1, 1, r.d_log_temperature);
    Vector x = Flatten({&text, &image, &image_cand, &text_cand, &log_tau});
    Vector g = Flatten({&r.d_text, &r.d_image, &r.d_image_candidates, &r.d_text_candidates, &d_tau});
    auto f = [&](const Vector& v) {
      Matrix t = text, i = image, ic = image_cand, tc = text_cand, lt = log_tau;
      Unflatten(v, {&t, &i, &ic, &tc, &lt});
      return reference::Itc<Real>(Ext(t), Ext(i), Ext(ic), Ext(tc), lt(0, 0));
    };
    rows.push_back(Row("itc", Dims({{"N", n}, {"D", d}, {"M", m}}), FiniteDiffCheck(f, x, g, h), tolerance));
  }

  {  // RITC: L=6, D=8, active hinge away from ties.
    const Eigen::Index l = 6, d = 8;
    const double margin = 0.2;
    std::vector<bool> valid = InteriorMask(l);
    Vector img;
    Matrix tok, rew;
    do {
      img = RandomMatrix(d, 1, rng);
      tok = RandomMatrix(l, d, rng, 0.5);
      rew = RandomMatrix(l, d, rng, 0.5);
    } while (!RitcNonDegenerate(img, tok, rew, valid, margin));
    RitcResult r = RitcLoss(img, tok, rew, valid, valid, margin);
    Matrix img_m = img;
    Matrix d_img = r.d_image_cls;
    Vector x = Flatten({&img_m, &tok, &rew});
    Vector g = Flatten({&d_img, &r.d_tokens, &r.d_rewritten_tokens});
    auto f = [&](const Vector& v) {
      Matrix a = img_m, b = tok, c = rew;
      Unflatten(v, {&a, &b, &c});
      return reference::Ritc<Real>(Ext(a).transpose(), Ext(b), Ext(c), valid, valid, margin);
    };
    rows.push_back(Row("ritc", Dims({{"L", l}, {"D", d}}), FiniteDiffCheck(f, x, g, h), tolerance));
  }

  {  // RITM: 4 positive, 8 hard-negative, 4 rewritten pairs.
    Matrix pos = RandomMatrix(4, 2, rng, 2.0);
    Matrix neg = RandomMatrix(8, 2, rng, 2.0);
    Matrix rew = RandomMatrix(4, 2, rng, 2.0);
    RitmResult r = RitmLoss(pos, neg, rew);
    Vector x = Flatten({&pos, &neg, &rew});
    Vector g = Flatten({&r.d_positive, &r.d_hard_negative, &r.d_rewritten});
    auto f = [&](const Vector& v) {
      Matrix a = pos, b = neg, c = rew;
      Unflatten(v, {&a, &b, &c});
      return reference::Ritm<Real>(Ext(a), Ext(b), Ext(c));
    };
    rows.push_back(Row("ritm", Dims({{"N", 4}, {"neg", 8}, {"rew", 4}}), FiniteDiffCheck(f, x, g, h), tolerance));
  }

  {  // MLM: L=7, V=11.
    const Eigen::Index l = 7, v = 11;
    Matrix logits = RandomMatrix(l, v, rng, 2.0);
    std::vector<int> labels(l, kIgnoreLabel);
    labels[1 + rng.Below(l - 2)] = static_cast<int>(rng.Below(v));
    for (Eigen::Index i = 1; i + 1 < l; ++i) {
      if (rng.Bernoulli(0.4)) labels[i] = static_cast<int>(rng.Below(v));
    }
    MlmResult r = MlmLoss(logits, labels);
    Vector x = Flatten({&logits});
    Vector g = Flatten({&r.d_logits});
    auto f = [&](const Vector& flat) {
      Matrix a = logits;
      Unflatten(flat, {&a});
      return reference::Mlm<Real>(Ext(a), labels);
    };
    rows.push_back(Row("mlm", Dims({{"L", l}, {"V", v}}), FiniteDiffCheck(f, x, g, h), tolerance));
  }

  {  // RLM: L=12.
    const Eigen::Index l = 12;
    Matrix logits = RandomMatrix(l, 1, rng, 2.0);
    std::vector<bool> valid = InteriorMask(l);
    RlmTarget target{1 + rng.Below(l - 2), static_cast<size_t>(l)};
    RlmResult r = RlmLoss(logits.col(0), target, valid);
    Matrix d = r.d_logits;
    Vector x = Flatten({&logits});
    Vector g = Flatten({&d});
    auto f = [&](const Vector& flat) {
      Matrix a = logits;
      Unflatten(flat, {&a});
      return reference::Rlm<Real>(Ext(a), target.position, valid);
    };
    rows.push_back(Row("rlm", Dims({{"L", l}}), FiniteDiffCheck(f, x, g, h), tolerance));
  }

  {  // Composite: all five losses read overlapping views of one vector.
    const Eigen::Index size = 48;
    const Eigen::Index n = 3, m = 3, d = 4, l = 5, v = 6;
    const double margin = 0.2;
    const View itc_t{0}, itc_i{7}, itc_ic{13}, itc_tc{29}, ritc_img{5}, ritc_tok{17}, ritc_rew{31},
        ritm_pos{3}, ritm_neg{11}, ritm_rew{23}, mlm_logits{9}, rlm_logits{19};
    std::vector<bool> valid = InteriorMask(l);
    std::vector<int> labels(l, kIgnoreLabel);
    labels[1] = 2;
    labels[3] = 5;
    RlmTarget target{2, static_cast<size_t>(l)};

    struct Inputs {
      Matrix t, i, ic, tc, img, tok, rew, pos, neg, rr, ml, rl;
    };
    auto read = [&](const Vector& theta) {
      return Inputs{itc_t.Read(theta, n, d),        itc_i.Read(theta, n, d),
                    itc_ic.Read(theta, n + m, d),   itc_tc.Read(theta, n + m, d),
                    ritc_img.Read(theta, d, 1),     ritc_tok.Read(theta, l, d),
                    ritc_rew.Read(theta, l, d),     ritm_pos.Read(theta, n, 2),
                    ritm_neg.Read(theta, n, 2),     ritm_rew.Read(theta, n, 2),
                    mlm_logits.Read(theta, l, v),   rlm_logits.Read(theta, l, 1)};
    };
    auto analytic = [&](const Vector& theta) {
      Inputs x = read(theta);
      ItcResult a = ItcLoss(x.t, x.i, x.ic, x.tc, 0.0, kNoNormCheck);
      RitcResult b = RitcLoss(x.img.col(0), x.tok, x.rew, valid, valid, margin);
      RitmResult c = RitmLoss(x.pos, x.neg, x.rr);
      MlmResult e = MlmLoss(x.ml, labels);
      RlmResult f = RlmLoss(x.rl.col(0), target, valid);
      Vector grad = Vector::Zero(theta.size());
      itc_t.Scatter(a.d_text, grad);
      itc_i.Scatter(a.d_image, grad);
      itc_ic.Scatter(a.d_image_candidates, grad);
      itc_tc.Scatter(a.d_text_candidates, grad);
      ritc_img.Scatter(b.d_image_cls, grad);
      ritc_tok.Scatter(b.d_tokens, grad);
      ritc_rew.Scatter(b.d_rewritten_tokens, grad);
      ritm_pos.Scatter(c.d_positive, grad);
      ritm_neg.Scatter(c.d_hard_negative, grad);
      ritm_rew.Scatter(c.d_rewritten, grad);
      mlm_logits.Scatter(e.d_logits, grad);
      rlm_logits.Scatter(f.d_logits, grad);
      return grad;
    };
    auto reference = [&](const Vector& theta) {
      Inputs x = read(theta);
      return reference::Itc<Real>(Ext(x.t), Ext(x.i), Ext(x.ic), Ext(x.tc), 0.0) +
             reference::Ritc<Real>(Ext(x.img).transpose(), Ext(x.tok), Ext(x.rew), valid, valid, margin) +
             reference::Ritm<Real>(Ext(x.pos), Ext(x.neg), Ext(x.rr)) + reference::Mlm<Real>(Ext(x.ml), labels) +
             reference::Rlm<Real>(Ext(x.rl), target.position, valid);
    };

    Vector theta;
    for (;;) {
      theta = RandomMatrix(size, 1, rng, 0.5).col(0);
      Vector img = ritc_img.Read(theta, d, 1).col(0);
      if (RitcNonDegenerate(img, ritc_tok.Read(theta, l, d), ritc_rew.Read(theta, l, d), valid, margin)) break;
    }
    rows.push_back(
        Row("total", Dims({{"shared", size}}), FiniteDiffCheck(reference, theta, analytic(theta), h), tolerance));
  }
  return rows;
}

std::vector<GradCheckRow> RunGradCheckSuite(size_t points, uint64_t seed, double h, double tolerance) {
  std::vector<GradCheckRow> rows;
  auto merge = [&](const GradCheckRow& r) {
    auto it = std::find_if(rows.begin(), rows.end(), [&](const GradCheckRow& x) { return x.name == r.name; });
    if (it == rows.end()) {
      rows.push_back(r);
      rows.back().points = 1;
      return;
    }
    it->max_rel_error = std::max(it->max_rel_error, r.max_rel_error);
    it->passed = it->passed && r.passed;
    ++it->points;
  };
  for (size_t p = 0; p < points; ++p) {
    const uint64_t point_seed = DeriveSeed(seed, p);
    for (const GradCheckRow& r : RunLossGradChecks(point_seed, h, tolerance)) merge(r);
    merge(RunToyModelGradCheck(point_seed, h, tolerance));
  }
  return rows;
}

}  // namespace finevl
