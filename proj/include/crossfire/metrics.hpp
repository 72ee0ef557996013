#pragma once

// Ranking metrics for binary labels. Ties in scores are handled as groups:
// AUROC counts a tied positive/negative pair as one half, AP evaluates
// precision only at distinct score thresholds.

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

namespace crossfire {

class UndefinedMetric : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

namespace detail {

inline std::vector<std::size_t> order_by_score_desc(std::span<const double> scores) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return idx;
}

inline void check_sizes(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("metric: scores/labels size mismatch");
}

}  // namespace detail

inline double auroc(std::span<const double> scores, std::span<const int> labels) {
  detail::check_sizes(scores, labels);
  const auto idx = detail::order_by_score_desc(scores);
  double pos = 0, neg = 0;
  for (int y : labels) (y ? pos : neg) += 1;
  if (pos == 0 || neg == 0) throw UndefinedMetric("AUROC requires both positive and negative labels");

  // Walk tie groups from the top; every positive outranks the negatives seen later.
  double wins = 0.0;
  double neg_below = neg;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    double gp = 0, gn = 0;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
      (labels[idx[j]] ? gp : gn) += 1;
      ++j;
    }
    neg_below -= gn;
    wins += gp * neg_below + 0.5 * gp * gn;
    i = j;
  }
  return wins / (pos * neg);
}

/// Sum over thresholds of (recall increment) x precision.
inline double average_precision(std::span<const double> scores, std::span<const int> labels) {
  detail::check_sizes(scores, labels);
  const auto idx = detail::order_by_score_desc(scores);
  const double pos = static_cast<double>(std::count_if(labels.begin(), labels.end(), [](int y) { return y != 0; }));
  if (pos == 0) throw UndefinedMetric("AP requires at least one positive label");

  double tp = 0, seen = 0, ap = 0, prev_recall = 0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
      tp += labels[idx[j]] ? 1 : 0;
      seen += 1;
      ++j;
    }
    const double recall = tp / pos;
    ap += (recall - prev_recall) * (tp / seen);
    prev_recall = recall;
    i = j;
  }
  return ap;
}

}  // namespace crossfire
