#ifndef FINEVL_SRC_REFERENCE_LOSSES_H_
#define FINEVL_SRC_REFERENCE_LOSSES_H_

// Value-only restatements of the loss kernels, written directly from their
// definitions and templated on the scalar type. Instantiated in long double
// they are the numeric side of every gradient check; in double they serve
// gradient-free evaluation.

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include <Eigen/Dense>

#include "finevl/losses.h"

namespace finevl::reference {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;

template <typename T>
T LogSumExp(const std::vector<T>& z) {
  T mx = *std::max_element(z.begin(), z.end());
  T s = 0;
  for (T v : z) s += std::exp(v - mx);
  return mx + std::log(s);
}

template <typename T>
T RowDot(const Mat<T>& a, Eigen::Index i, const Mat<T>& b, Eigen::Index j) {
  T s = 0;
  for (Eigen::Index k = 0; k < a.cols(); ++k) s += a(i, k) * b(j, k);
  return s;
}

template <typename T>
T InfoNce(const Mat<T>& anchors, const Mat<T>& cands, T inv_tau) {
  T total = 0;
  for (Eigen::Index i = 0; i < anchors.rows(); ++i) {
    std::vector<T> z;
    for (Eigen::Index j = 0; j < cands.rows(); ++j) z.push_back(RowDot(anchors, i, cands, j) * inv_tau);
    total += LogSumExp(z) - z[static_cast<size_t>(i)];
  }
  return total / static_cast<T>(anchors.rows());
}

template <typename T>
T Itc(const Mat<T>& text, const Mat<T>& image, const Mat<T>& image_cands, const Mat<T>& text_cands, T log_tau) {
  T inv_tau = std::exp(-log_tau);
  return InfoNce(text, image_cands, inv_tau) + InfoNce(image, text_cands, inv_tau);
}

// `image_cls` is a single row.
template <typename T>
T Ritc(const Mat<T>& image_cls, const Mat<T>& tokens, const Mat<T>& rewritten, const std::vector<bool>& valid,
       const std::vector<bool>& rewritten_valid, T margin, bool paper_sign = false) {
  auto min_dot = [&](const Mat<T>& m, const std::vector<bool>& mask) {
    T best = std::numeric_limits<T>::infinity();
    for (Eigen::Index k = 0; k < m.rows(); ++k) {
      if (mask[static_cast<size_t>(k)]) best = std::min(best, RowDot(m, k, image_cls, 0));
    }
    return best;
  };
  T diff = min_dot(rewritten, rewritten_valid) - min_dot(tokens, valid);
  if (paper_sign) diff = -diff;
  return std::max<T>(0, margin + diff);
}

template <typename T>
T CrossEntropyRow(const Mat<T>& logits, Eigen::Index row, int label) {
  std::vector<T> z;
  for (Eigen::Index k = 0; k < logits.cols(); ++k) z.push_back(logits(row, k));
  return LogSumExp(z) - z[static_cast<size_t>(label)];
}

template <typename T>
T Ritm(const Mat<T>& pos, const Mat<T>& neg, const Mat<T>& rew) {
  T total = 0;
  for (Eigen::Index r = 0; r < pos.rows(); ++r) total += CrossEntropyRow(pos, r, kMatchLabel);
  for (Eigen::Index r = 0; r < neg.rows(); ++r) total += CrossEntropyRow(neg, r, kMismatchLabel);
  for (Eigen::Index r = 0; r < rew.rows(); ++r) total += CrossEntropyRow(rew, r, kMismatchLabel);
  return total / static_cast<T>(pos.rows() + neg.rows() + rew.rows());
}

template <typename T>
T Mlm(const Mat<T>& logits, const std::vector<int>& labels) {
  T total = 0;
  int count = 0;
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == kIgnoreLabel) continue;
    total += CrossEntropyRow(logits, static_cast<Eigen::Index>(i), labels[i]);
    ++count;
  }
  return count ? total / static_cast<T>(count) : T(0);
}

// `logits` is a single column.
template <typename T>
T Rlm(const Mat<T>& logits, size_t target, const std::vector<bool>& valid) {
  std::vector<T> z;
  for (size_t i = 0; i < valid.size(); ++i) {
    if (valid[i]) z.push_back(logits(static_cast<Eigen::Index>(i), 0));
  }
  return LogSumExp(z) - logits(static_cast<Eigen::Index>(target), 0);
}

}  // namespace finevl::reference

#endif  // FINEVL_SRC_REFERENCE_LOSSES_H_
