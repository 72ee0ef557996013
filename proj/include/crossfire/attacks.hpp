#pragma once

/**
 * @file attacks.hpp
 * @brief Progressive bit search (PBS) and the PBFA / IBFA bit-flip attacks.
 *
 * Each round runs one forward-backward pass without updating weights, ranks
 * weight cells by |gradient|, proposes one bit per cell, then evaluates every
 * proposal by applying the flip, measuring the objective and reverting. The
 * extremal proposal is committed. Ties are broken by (layer, row, col, bit).
 *
 * PBFA maximises the supervised loss on a labelled batch. IBFA minimises the
 * l1 or KL divergence between the outputs of two unlabelled batches.
 *
 * This header deliberately knows nothing about defenses: an attacker only
 * ever sees the deployed GinModel.
 */

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "crossfire/gin.hpp"
#include "crossfire/quant.hpp"

namespace crossfire {

enum class CandidateScope { kGlobal, kPerLayer };
enum class Goal { kMaximize, kMinimize };

struct AttackBudget {
  int max_flips = 15;
  int candidates_k = 10;
  CandidateScope scope = CandidateScope::kPerLayer;
  /// Evaluate every (cell, bit) instead of the gradient-ranked proposals.
  bool exhaustive = false;
};

struct BitLocation {
  std::size_t layer = 0;
  std::size_t row = 0;
  std::size_t col = 0;
  int bit = 0;

  auto operator<=>(const BitLocation&) const = default;
};

struct Candidate {
  BitLocation loc;
  double grad_magnitude = 0.0;
};

struct AttackTrace {
  std::vector<BitFlipEvent> flips;
  std::vector<double> objective_curve;  // objective after each committed flip
  double initial_objective = 0.0;
};

/// Highest-significance bit whose flip moves `v` in `direction` (+1 up, -1
/// down). Falls back to the sign bit when no bit qualifies or direction is 0.
inline int promising_bit(std::int8_t v, int direction) noexcept {
  if (direction == 0) return 7;
  for (int bit = 7; bit >= 0; --bit) {
    const int delta = static_cast<int>(xor_bit(v, bit)) - static_cast<int>(v);
    if ((direction > 0 && delta > 0) || (direction < 0 && delta < 0)) return bit;
  }
  return 7;
}

inline Goal default_goal(LossKind kind) noexcept {
  return kind == LossKind::kBce ? Goal::kMaximize : Goal::kMinimize;
}

/// Top-k cells by |dL/dW| (globally or per layer), each with its most
/// promising bit, sorted by |gradient| descending then by location.
inline std::vector<Candidate> pbs_candidates(const GinModel& model, const GraphBatch& batch, const LossTarget& target,
                                             LossKind kind, int k, CandidateScope scope = CandidateScope::kGlobal,
                                             std::optional<Goal> goal = std::nullopt) {
  if (k < 1) throw std::invalid_argument("pbs_candidates: k must be >= 1");
  const Goal g = goal.value_or(default_goal(kind));
  const BackwardResult br = backward(model.dense(), batch, target, kind);

  auto by_rank = [](const Candidate& a, const Candidate& b) {
    if (a.grad_magnitude != b.grad_magnitude) return a.grad_magnitude > b.grad_magnitude;
    return a.loc < b.loc;
  };
  auto make = [&](std::size_t l, std::size_t r, std::size_t c) {
    const double grad = br.grads.weights[l](static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
    int direction = grad > 0 ? 1 : (grad < 0 ? -1 : 0);
    if (g == Goal::kMinimize) direction = -direction;
    return Candidate{{l, r, c, promising_bit(model.weight(l)(r, c), direction)}, std::abs(grad)};
  };

  std::vector<Candidate> out;
  std::vector<Candidate> pool;
  for (std::size_t l = 0; l < model.num_layers(); ++l) {
    const auto& w = model.weight(l);
    for (std::size_t r = 0; r < w.rows(); ++r) {
      for (std::size_t c = 0; c < w.cols(); ++c) pool.push_back(make(l, r, c));
    }
    if (scope == CandidateScope::kPerLayer) {
      const auto take = std::min(pool.size(), static_cast<std::size_t>(k));
      std::partial_sort(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(take), pool.end(), by_rank);
      out.insert(out.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(take));
      pool.clear();
    }
  }
  if (scope == CandidateScope::kGlobal) {
    const auto take = std::min(pool.size(), static_cast<std::size_t>(k));
    std::partial_sort(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(take), pool.end(), by_rank);
    out.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(take));
  }
  std::stable_sort(out.begin(), out.end(), by_rank);
  return out;
}

namespace detail {

inline AttackTrace progressive_bit_search(GinModel& model, const GraphBatch& batch, const LossTarget& target,
                                          LossKind kind, Goal goal, const AttackBudget& budget) {
  if (budget.max_flips < 0 || budget.candidates_k < 1) throw std::invalid_argument("AttackBudget: invalid values");
  AttackTrace trace;
  DenseGin dense = model.dense();
  trace.initial_objective = objective(dense, batch, target, kind);
  std::set<BitLocation> used;

  for (int round = 0; round < budget.max_flips; ++round) {
    std::vector<BitLocation> proposals;
    if (budget.exhaustive) {
      for (std::size_t l = 0; l < model.num_layers(); ++l) {
        const auto& w = model.weight(l);
        for (std::size_t r = 0; r < w.rows(); ++r)
          for (std::size_t c = 0; c < w.cols(); ++c)
            for (int bit = 0; bit < 8; ++bit) proposals.push_back({l, r, c, bit});
      }
    } else {
      for (const auto& c : pbs_candidates(model, batch, target, kind, budget.candidates_k, budget.scope, goal)) {
        proposals.push_back(c.loc);
      }
      std::sort(proposals.begin(), proposals.end());
      proposals.erase(std::unique(proposals.begin(), proposals.end()), proposals.end());
    }
    std::erase_if(proposals, [&](const BitLocation& p) { return used.count(p) > 0; });
    if (proposals.empty()) break;

    const BitLocation* best = nullptr;
    double best_obj = 0.0;
    for (const auto& p : proposals) {
      QuantTensor& w = model.weight(p.layer);
      auto& cell = dense.layers[p.layer].weight(static_cast<Eigen::Index>(p.row), static_cast<Eigen::Index>(p.col));
      const BitFlipEvent ev = flip_bit(w, p.row, p.col, p.bit, p.layer);
      cell = ev.after * w.scale();
      const double obj = objective(dense, batch, target, kind);
      flip_bit(w, p.row, p.col, p.bit, p.layer);
      cell = ev.before * w.scale();
      const bool better = goal == Goal::kMaximize ? obj > best_obj : obj < best_obj;
      if (!best || better) {
        best = &p;
        best_obj = obj;
      }
    }

    QuantTensor& w = model.weight(best->layer);
    const BitFlipEvent ev = flip_bit(w, best->row, best->col, best->bit, best->layer);
    dense.layers[best->layer].weight(static_cast<Eigen::Index>(best->row), static_cast<Eigen::Index>(best->col)) =
        ev.after * w.scale();
    used.insert(*best);
    trace.flips.push_back(ev);
    trace.objective_curve.push_back(best_obj);
  }
  return trace;
}

}  // namespace detail

/// Progressive BFA: greedily maximise the supervised loss on (batch, targets).
inline AttackTrace pbfa(GinModel& model, const GraphBatch& batch, const Matrix& targets, const AttackBudget& budget) {
  return detail::progressive_bit_search(model, batch, std::cref(targets), LossKind::kBce, Goal::kMaximize, budget);
}

/// Index pair (i < j) of the pool batches whose clean outputs diverge most.
inline std::pair<std::size_t, std::size_t> ibfa_select_pair(const GinModel& model, std::span<const GraphBatch> pool,
                                                            LossKind divergence = LossKind::kL1) {
  if (pool.size() < 2) throw std::invalid_argument("ibfa_select_pair: pool needs at least two batches");
  if (divergence == LossKind::kBce) throw std::invalid_argument("ibfa_select_pair: divergence must be l1 or kl");
  const DenseGin dense = model.dense();
  std::vector<Matrix> outputs;
  for (const auto& b : pool) {
    if (b.num_graphs != pool.front().num_graphs) {
      throw std::invalid_argument("ibfa_select_pair: pool batches must have equal graph counts");
    }
    outputs.push_back(forward(dense, b));
  }
  std::pair<std::size_t, std::size_t> best{0, 1};
  double best_score = -1.0;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    for (std::size_t j = i + 1; j < pool.size(); ++j) {
      const double s = divergence == LossKind::kL1 ? l1_divergence(outputs[i], outputs[j])
                                                   : kl_divergence(outputs[i], outputs[j]);
      if (s > best_score) {
        best_score = s;
        best = {i, j};
      }
    }
  }
  return best;
}

/// Injectivity BFA: greedily minimise the divergence between the outputs on
/// `a` and `b`. Labels on either batch are never read.
inline AttackTrace ibfa(GinModel& model, const GraphBatch& a, const GraphBatch& b, const AttackBudget& budget,
                        LossKind divergence = LossKind::kL1) {
  if (divergence == LossKind::kBce) throw std::invalid_argument("ibfa: divergence must be l1 or kl");
  return detail::progressive_bit_search(model, a, std::cref(b), divergence, Goal::kMinimize, budget);
}

/// One JSON object per flip: layer,row,col,bit,before,after,objective.
inline void write_trace_jsonl(const AttackTrace& trace, std::ostream& os) {
  for (std::size_t i = 0; i < trace.flips.size(); ++i) {
    const auto& f = trace.flips[i];
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", trace.objective_curve[i]);
    os << "{\"layer\":" << f.layer << ",\"row\":" << f.row << ",\"col\":" << f.col << ",\"bit\":" << f.bit
       << ",\"before\":" << static_cast<int>(f.before) << ",\"after\":" << static_cast<int>(f.after)
       << ",\"objective\":" << buf << "}\n";
  }
}

}  // namespace crossfire
