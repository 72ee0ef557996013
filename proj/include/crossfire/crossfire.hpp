#pragma once

/**
 * @file crossfire.hpp
 * @brief Honeypot + hash-ledger defense with verified reconstruction.
 *
 * Initialization (fixed order):
 *   dequantize -> magnitude prune -> pseudo-label unlabeled batches ->
 *   accumulate gradients -> select honeypots -> per-layer gamma and saliency ->
 *   encode honeypots -> re-quantize -> seal honeypot cells and build the ledger.
 *
 * Monitoring recomputes the 4-byte layer digests. On mismatch, row/column
 * digests of the row and column sums localize suspect cells (the cartesian
 * product of mismatching rows and columns) and reconstruction runs three
 * stages per layer, verifying after each: restore sealed honeypot cells,
 * MSB-unset out-of-range cells, zero whatever is still unresolved.
 *
 * Orientation: weight matrices are [out x in]. Honeypot neuron h of layer l
 * owns row h of that layer; its outgoing weights are column h of its carrier
 * layer (see carrier_of), which encoding divides by the saliency while the
 * carrier's runtime input multiplier scales the activation back up.
 */

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "crossfire/blake2b.hpp"
#include "crossfire/gin.hpp"
#include "crossfire/quant.hpp"

namespace crossfire {

inline constexpr std::size_t kLayerDigestBytes = 4;
using LayerDigest = std::array<std::uint8_t, kLayerDigestBytes>;

struct CrossfireConfig {
  double prune_ratio = 0.75;
  double p_honeypot = 0.1;
  double gamma = 2.0;
  double lambda = 1.1;
  std::size_t cross_digest = 2;
  bool dynamic_digest = false;
  std::size_t max_digest = 8;
};

// ---------------------------------------------------------------------------
// Sparsity

/// The ceil(p*K)-th smallest |w| (at least the first).
inline double nearest_rank_quantile_abs(const Matrix& w, double p) {
  std::vector<double> a(static_cast<std::size_t>(w.size()));
  for (Eigen::Index i = 0; i < w.size(); ++i) a[static_cast<std::size_t>(i)] = std::abs(w.data()[i]);
  std::sort(a.begin(), a.end());
  const auto k = static_cast<double>(a.size());
  const auto rank = static_cast<std::size_t>(std::max(1.0, std::ceil(p * k - 1e-9)));
  return a[std::min(rank, a.size()) - 1];
}

/// Zero every entry with |w| strictly below the p-quantile of |W|.
inline Matrix induce_sparsity(const Matrix& w, double p) {
  if (!(p >= 0.0 && p < 1.0)) throw std::invalid_argument("induce_sparsity: require 0 <= p < 1");
  if (w.size() == 0) return w;
  const double tau = nearest_rank_quantile_abs(w, p);
  Matrix out = w;
  for (Eigen::Index i = 0; i < out.size(); ++i) {
    if (std::abs(out.data()[i]) < tau) out.data()[i] = 0.0;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Honeypot selection and scaling

struct PseudoLabeled {
  Matrix targets;
  GraphBatch batch;
};

/// Thresholds the clean model's sigmoid outputs at 0.5 (logit >= 0).
inline std::vector<PseudoLabeled> pseudo_label(const DenseGin& m, std::span<const GraphBatch> unlabeled) {
  if (unlabeled.empty()) throw std::invalid_argument("pseudo_label: no batches");
  std::vector<PseudoLabeled> out;
  out.reserve(unlabeled.size());
  for (const auto& b : unlabeled) {
    const Matrix logits = forward(m, b);
    out.push_back({logits.unaryExpr([](double z) { return z >= 0.0 ? 1.0 : 0.0; }), without_labels(b)});
  }
  return out;
}

/// Sum over pseudo-labelled batches of dBCE/dW, one matrix per weight layer.
inline std::vector<Matrix> accumulate_gradients(const DenseGin& m, std::span<const PseudoLabeled> labeled) {
  std::vector<Matrix> g;
  for (const auto& l : m.layers) g.push_back(Matrix::Zero(l.weight.rows(), l.weight.cols()));
  for (const auto& [targets, batch] : labeled) {
    const BackwardResult br = backward(m, batch, std::cref(targets), LossKind::kBce);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += br.grads.weights[i];
  }
  return g;
}

inline Vector neuron_scores(const Matrix& g) { return g.cwiseAbs().rowwise().sum(); }

inline std::size_t honeypot_count(std::size_t neurons, double p) {
  const auto k = static_cast<std::size_t>(std::llround(static_cast<double>(neurons) * p));
  return std::clamp<std::size_t>(k, 1, neurons);
}

/// Indices (ascending) of the top-k neurons by score; ties go to the lower index.
inline std::vector<std::size_t> top_k_neurons(const Vector& scores, std::size_t k) {
  std::vector<std::size_t> idx(static_cast<std::size_t>(scores.size()));
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return scores(static_cast<Eigen::Index>(a)) > scores(static_cast<Eigen::Index>(b));
  });
  idx.resize(std::min(k, idx.size()));
  std::sort(idx.begin(), idx.end());
  return idx;
}

inline std::vector<std::size_t> select_honeypots(const Matrix& accumulated, double p) {
  if (!(p > 0.0 && p <= 1.0)) throw std::invalid_argument("select_honeypots: require 0 < p <= 1");
  const auto n = static_cast<std::size_t>(accumulated.rows());
  return top_k_neurons(neuron_scores(accumulated), honeypot_count(n, p));
}

/// gamma * lambda^l, with l = 0 for the first GIN block.
inline double layer_gamma(double gamma, double lambda, int l) {
  if (gamma < 1.0 || lambda < 1.0 || l < 0) throw std::invalid_argument("layer_gamma: require gamma, lambda >= 1, l >= 0");
  return gamma * std::pow(lambda, l);
}

/// Affine map of raw scores into [1, gamma_l]. Equal scores all map to gamma_l.
inline Vector saliency_from_scores(const Vector& s, double gamma_l) {
  if (s.size() == 0) throw std::invalid_argument("saliency: no honeypots");
  const double lo = s.minCoeff();
  const double hi = s.maxCoeff();
  if (!(hi > lo)) return Vector::Constant(s.size(), gamma_l);
  return (1.0 + ((s.array() - lo) * (gamma_l - 1.0) / (hi - lo))).matrix();
}

inline Vector saliency(const Matrix& accumulated, std::span<const std::size_t> honeypots, double gamma_l) {
  const Vector all = neuron_scores(accumulated);
  Vector s(static_cast<Eigen::Index>(honeypots.size()));
  for (std::size_t i = 0; i < honeypots.size(); ++i) s(static_cast<Eigen::Index>(i)) = all(static_cast<Eigen::Index>(honeypots[i]));
  return saliency_from_scores(s, gamma_l);
}

struct SealedEntry {
  std::uint32_t row = 0;
  std::uint32_t col = 0;
  std::int8_t value = 0;

  friend bool operator==(const SealedEntry&, const SealedEntry&) = default;
};

struct HoneypotLayer {
  std::vector<std::size_t> indices;  // honeypot neurons (rows) of this layer, ascending
  Vector saliency;                   // aligned with indices
  double gamma_l = 1.0;
  /// Post-encoding values of every cell of this weight matrix owned by a
  /// honeypot: its own honeypot rows plus the carrier columns of the
  /// previous layer's honeypots. Sorted by (row, col).
  std::vector<SealedEntry> sealed;

  friend bool operator==(const HoneypotLayer& a, const HoneypotLayer& b) {
    return a.indices == b.indices && a.saliency == b.saliency && a.gamma_l == b.gamma_l && a.sealed == b.sealed;
  }
};

struct HoneypotRegistry {
  std::vector<HoneypotLayer> layers;

  std::optional<std::int8_t> sealed_value(std::size_t layer, std::size_t row, std::size_t col) const {
    if (layer >= layers.size()) return std::nullopt;
    const auto& s = layers[layer].sealed;
    const SealedEntry key{static_cast<std::uint32_t>(row), static_cast<std::uint32_t>(col), 0};
    auto it = std::lower_bound(s.begin(), s.end(), key, [](const SealedEntry& a, const SealedEntry& b) {
      return std::pair(a.row, a.col) < std::pair(b.row, b.col);
    });
    if (it != s.end() && it->row == key.row && it->col == key.col) return it->value;
    return std::nullopt;
  }

  bool owns(std::size_t layer, std::size_t row, std::size_t col) const {
    return sealed_value(layer, row, col).has_value();
  }

  std::size_t total_honeypots() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.indices.size();
    return n;
  }

  friend bool operator==(const HoneypotRegistry&, const HoneypotRegistry&) = default;
};

/// Divide each honeypot's outgoing column by its saliency and install the
/// matching runtime activation multiplier. Layers without a carrier (the
/// classifier head) are left untouched. Exact in real arithmetic.
inline void encode_honeypots(DenseGin& m, std::span<const HoneypotLayer> honeypots) {
  if (honeypots.size() > m.layers.size()) throw std::invalid_argument("encode_honeypots: too many layers");
  for (std::size_t l = 0; l < honeypots.size(); ++l) {
    const auto& hp = honeypots[l];
    if (hp.saliency.size() != static_cast<Eigen::Index>(hp.indices.size())) {
      throw std::invalid_argument("encode_honeypots: saliency/index size mismatch");
    }
    for (auto h : hp.indices) {
      if (h >= static_cast<std::size_t>(m.layers[l].weight.rows())) {
        throw std::invalid_argument("encode_honeypots: honeypot index " + std::to_string(h) + " out of range in layer " +
                                    std::to_string(l));
      }
    }
    const auto carrier = carrier_of(m, l);
    if (!carrier) continue;
    auto& next = m.layers[carrier->layer];
    for (std::size_t i = 0; i < hp.indices.size(); ++i) {
      const double s = hp.saliency(static_cast<Eigen::Index>(i));
      const Eigen::Index col = carrier->column_offset + static_cast<Eigen::Index>(hp.indices[i]);
      next.weight.col(col) /= s;
      next.input_scale(col) *= s;
    }
  }
}

/// Fills `sealed` for every layer from the (re-quantized) deployed model.
inline void seal_honeypot_cells(const GinModel& model, const DenseGin& shape, std::vector<HoneypotLayer>& layers) {
  std::vector<std::vector<SealedEntry>> cells(model.num_layers());
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const QuantTensor& w = model.weight(l);
    for (auto h : layers[l].indices) {
      for (std::size_t c = 0; c < w.cols(); ++c) {
        cells[l].push_back({static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(c), w(h, c)});
      }
    }
    if (const auto carrier = carrier_of(shape, l)) {
      const QuantTensor& next = model.weight(carrier->layer);
      for (auto h : layers[l].indices) {
        const auto col = static_cast<std::size_t>(carrier->column_offset) + h;
        for (std::size_t r = 0; r < next.rows(); ++r) {
          cells[carrier->layer].push_back({static_cast<std::uint32_t>(r), static_cast<std::uint32_t>(col), next(r, col)});
        }
      }
    }
  }
  for (std::size_t l = 0; l < layers.size(); ++l) {
    auto& s = cells[l];
    std::sort(s.begin(), s.end(), [](const SealedEntry& a, const SealedEntry& b) {
      return std::pair(a.row, a.col) < std::pair(b.row, b.col);
    });
    s.erase(std::unique(s.begin(), s.end()), s.end());
    layers[l].sealed = std::move(s);
  }
}

// ---------------------------------------------------------------------------
// Hash ledger

inline LayerDigest layer_digest(const QuantTensor& w) {
  const auto d = Blake2b::digest(w.bytes(), kLayerDigestBytes);
  LayerDigest out{};
  std::copy(d.begin(), d.end(), out.begin());
  return out;
}

/// min(max(1, floor(log2(n*m) / 8)), M)
inline std::size_t dynamic_cross_digest(std::size_t rows, std::size_t cols, std::size_t max_bytes) {
  const double cells = static_cast<double>(rows * cols);
  const double bytes = cells > 0 ? std::floor(std::log2(cells) / 8.0) : 1.0;
  return std::min(std::max<std::size_t>(1, static_cast<std::size_t>(std::max(1.0, bytes))), std::max<std::size_t>(1, max_bytes));
}

inline std::vector<std::int64_t> row_sums(const QuantTensor& w) {
  std::vector<std::int64_t> s(w.rows(), 0);
  for (std::size_t r = 0; r < w.rows(); ++r)
    for (std::size_t c = 0; c < w.cols(); ++c) s[r] += w(r, c);
  return s;
}

inline std::vector<std::int64_t> col_sums(const QuantTensor& w) {
  std::vector<std::int64_t> s(w.cols(), 0);
  for (std::size_t r = 0; r < w.rows(); ++r)
    for (std::size_t c = 0; c < w.cols(); ++c) s[c] += w(r, c);
  return s;
}

/// Concatenated d-byte digests of the little-endian 64-bit sums.
inline std::vector<std::uint8_t> sum_digests(std::span<const std::int64_t> sums, std::size_t d) {
  std::vector<std::uint8_t> out;
  out.reserve(sums.size() * d);
  for (auto s : sums) {
    const auto bytes = le64(s);
    const auto dg = Blake2b::digest(bytes, d);
    out.insert(out.end(), dg.begin(), dg.end());
  }
  return out;
}

struct LayerLedger {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t digest_size = 2;
  std::vector<std::uint8_t> row_digests;  // rows * digest_size
  std::vector<std::uint8_t> col_digests;  // cols * digest_size
  LayerDigest layer_digest{};
  WeightBounds bounds;

  friend bool operator==(const LayerLedger&, const LayerLedger&) = default;
};

struct HashLedger {
  std::vector<LayerLedger> layers;

  std::vector<LayerDigest> model_digests() const {
    std::vector<LayerDigest> out;
    for (const auto& l : layers) out.push_back(l.layer_digest);
    return out;
  }

  friend bool operator==(const HashLedger&, const HashLedger&) = default;
};

inline LayerLedger build_layer_ledger(const QuantTensor& w, std::size_t d) {
  LayerLedger ll;
  ll.rows = w.rows();
  ll.cols = w.cols();
  ll.digest_size = d;
  ll.row_digests = sum_digests(row_sums(w), d);
  ll.col_digests = sum_digests(col_sums(w), d);
  ll.layer_digest = layer_digest(w);
  ll.bounds = compute_bounds(w);
  return ll;
}

inline HashLedger build_ledger(const GinModel& model, std::size_t cross_digest = 2, bool dynamic = false,
                               std::size_t max_digest = 8) {
  if (!dynamic && (cross_digest == 0 || cross_digest > Blake2b::kMaxDigest)) {
    throw std::invalid_argument("build_ledger: cross digest must be in [1,64]");
  }
  HashLedger ledger;
  for (const auto& l : model.layers) {
    const std::size_t d = dynamic ? dynamic_cross_digest(l.weight.rows(), l.weight.cols(), max_digest) : cross_digest;
    ledger.layers.push_back(build_layer_ledger(l.weight, d));
  }
  return ledger;
}

/// Sealed storage: digests, bounds and honeypot values. Immutable once built.
class SealedVault {
 public:
  SealedVault() = default;
  SealedVault(HashLedger ledger, HoneypotRegistry registry)
      : ledger_(std::move(ledger)), registry_(std::move(registry)) {}

  const HashLedger& ledger() const noexcept { return ledger_; }
  const HoneypotRegistry& registry() const noexcept { return registry_; }

 private:
  HashLedger ledger_;
  HoneypotRegistry registry_;
};

struct ProtectedModel {
  GinModel model;
  SealedVault vault;
};

/// Full initialization pipeline over a trained quantized model.
inline ProtectedModel crossfire_protect(const GinModel& trained, std::span<const GraphBatch> unlabeled,
                                        const CrossfireConfig& cfg = {}) {
  DenseGin dense = trained.dense();
  for (auto& l : dense.layers) l.weight = induce_sparsity(l.weight, cfg.prune_ratio);

  const auto labeled = pseudo_label(dense, unlabeled);
  const auto grads = accumulate_gradients(dense, labeled);

  std::vector<HoneypotLayer> layers(dense.layers.size());
  for (std::size_t l = 0; l < dense.layers.size(); ++l) {
    layers[l].indices = select_honeypots(grads[l], cfg.p_honeypot);
    layers[l].gamma_l = layer_gamma(cfg.gamma, cfg.lambda, static_cast<int>(block_of_layer(l)));
    layers[l].saliency = saliency(grads[l], layers[l].indices, layers[l].gamma_l);
  }
  encode_honeypots(dense, layers);

  ProtectedModel out;
  out.model = GinModel::from_dense(dense, trained.seed);
  seal_honeypot_cells(out.model, dense, layers);
  out.vault = SealedVault(build_ledger(out.model, cfg.cross_digest, cfg.dynamic_digest, cfg.max_digest),
                          HoneypotRegistry{std::move(layers)});
  return out;
}

// ---------------------------------------------------------------------------
// Monitoring, localization, reconstruction

inline std::vector<std::size_t> mismatched_layers(const GinModel& model, const HashLedger& ledger) {
  if (model.num_layers() != ledger.layers.size()) throw std::invalid_argument("ledger/model layer count mismatch");
  std::vector<std::size_t> out;
  for (std::size_t l = 0; l < model.num_layers(); ++l) {
    if (layer_digest(model.weight(l)) != ledger.layers[l].layer_digest) out.push_back(l);
  }
  return out;
}

inline bool monitor(const GinModel& model, const HashLedger& ledger) {
  return !mismatched_layers(model, ledger).empty();
}

inline bool verify(const GinModel& model, const HashLedger& ledger) { return !monitor(model, ledger); }

struct CellRef {
  std::size_t layer = 0;
  std::size_t row = 0;
  std::size_t col = 0;

  auto operator<=>(const CellRef&) const = default;
};

struct LayerSuspects {
  std::size_t layer = 0;
  std::vector<std::size_t> rows;
  std::vector<std::size_t> cols;

  std::vector<CellRef> candidates() const {
    std::vector<CellRef> out;
    for (auto r : rows)
      for (auto c : cols) out.push_back({layer, r, c});
    return out;
  }
};

struct SuspectSet {
  std::vector<LayerSuspects> layers;

  bool empty() const {
    return std::all_of(layers.begin(), layers.end(), [](const auto& l) { return l.rows.empty() || l.cols.empty(); });
  }

  std::size_t candidate_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.rows.size() * l.cols.size();
    return n;
  }

  bool contains(std::size_t layer, std::size_t row, std::size_t col) const {
    for (const auto& l : layers) {
      if (l.layer != layer) continue;
      return std::binary_search(l.rows.begin(), l.rows.end(), row) && std::binary_search(l.cols.begin(), l.cols.end(), col);
    }
    return false;
  }

  const LayerSuspects* find(std::size_t layer) const {
    for (const auto& l : layers)
      if (l.layer == layer) return &l;
    return nullptr;
  }
};

inline LayerSuspects localize_layer(const QuantTensor& w, const LayerLedger& ll, std::size_t layer) {
  if (w.rows() != ll.rows || w.cols() != ll.cols) throw std::invalid_argument("localize: shape mismatch");
  LayerSuspects s;
  s.layer = layer;
  const std::size_t d = ll.digest_size;
  const auto rd = sum_digests(row_sums(w), d);
  const auto cd = sum_digests(col_sums(w), d);
  for (std::size_t r = 0; r < ll.rows; ++r) {
    if (!std::equal(rd.begin() + static_cast<std::ptrdiff_t>(r * d), rd.begin() + static_cast<std::ptrdiff_t>((r + 1) * d),
                    ll.row_digests.begin() + static_cast<std::ptrdiff_t>(r * d))) {
      s.rows.push_back(r);
    }
  }
  for (std::size_t c = 0; c < ll.cols; ++c) {
    if (!std::equal(cd.begin() + static_cast<std::ptrdiff_t>(c * d), cd.begin() + static_cast<std::ptrdiff_t>((c + 1) * d),
                    ll.col_digests.begin() + static_cast<std::ptrdiff_t>(c * d))) {
      s.cols.push_back(c);
    }
  }
  return s;
}

/// Suspect rows/columns of every layer whose cross digests disagree with the ledger.
inline SuspectSet localize(const GinModel& model, const HashLedger& ledger) {
  if (model.num_layers() != ledger.layers.size()) throw std::invalid_argument("ledger/model layer count mismatch");
  SuspectSet out;
  for (std::size_t l = 0; l < model.num_layers(); ++l) {
    auto s = localize_layer(model.weight(l), ledger.layers[l], l);
    if (!s.rows.empty() || !s.cols.empty()) out.layers.push_back(std::move(s));
  }
  return out;
}

enum class RepairAction { kHoneypotRestore, kOodRepair, kZeroed, kUntouched };

inline std::string to_string(RepairAction a) {
  switch (a) {
    case RepairAction::kHoneypotRestore: return "honeypot-restore";
    case RepairAction::kOodRepair: return "ood-repair";
    case RepairAction::kZeroed: return "zeroed";
    case RepairAction::kUntouched: return "untouched";
  }
  return "?";
}

struct CellAction {
  CellRef cell;
  RepairAction action = RepairAction::kUntouched;
  std::int8_t before = 0;
  std::int8_t after = 0;
};

struct DefenseReport {
  bool attack_detected = false;
  std::vector<CellRef> flagged_cells;
  std::vector<CellAction> actions;
  bool verified = false;
  int flips_detected = 0;
  int flips_total = 0;

  std::size_t count(RepairAction a) const {
    return static_cast<std::size_t>(std::count_if(actions.begin(), actions.end(), [a](const auto& c) { return c.action == a; }));
  }
};

/// Suspect cells of a layer: the row x column product, plus every honeypot
/// cell on a suspect row or column. The latter catches flips whose row or
/// column sums cancel out.
inline std::vector<CellRef> repair_candidates(const LayerSuspects& s, const HoneypotRegistry& registry,
                                              const QuantTensor& w) {
  std::vector<CellRef> cells = s.candidates();
  if (s.layer < registry.layers.size()) {
    for (const auto& e : registry.layers[s.layer].sealed) {
      if (std::binary_search(s.rows.begin(), s.rows.end(), e.row) ||
          std::binary_search(s.cols.begin(), s.cols.end(), e.col)) {
        cells.push_back({s.layer, e.row, e.col});
      }
    }
  }
  std::sort(cells.begin(), cells.end());
  cells.erase(std::unique(cells.begin(), cells.end()), cells.end());
  std::erase_if(cells, [&](const CellRef& c) { return c.row >= w.rows() || c.col >= w.cols(); });
  return cells;
}

/// Honeypot restore, then MSB-unset of out-of-range cells, then zeroing, each
/// stage limited to the suspect cells of a layer and followed by a layer
/// digest check. Cells resolved by an earlier stage, and honeypot cells that
/// already hold their sealed value, are not touched by later stages.
inline DefenseReport reconstruct(GinModel& model, const HashLedger& ledger, const HoneypotRegistry& registry) {
  DefenseReport report;
  const auto bad_layers = mismatched_layers(model, ledger);
  report.attack_detected = !bad_layers.empty();
  if (!report.attack_detected) {
    report.verified = true;
    return report;
  }

  for (auto l : bad_layers) {
    QuantTensor& w = model.weight(l);
    const LayerLedger& ll = ledger.layers[l];
    const auto cells = repair_candidates(localize_layer(w, ll, l), registry, w);
    report.flagged_cells.insert(report.flagged_cells.end(), cells.begin(), cells.end());
    std::vector<RepairAction> action(cells.size(), RepairAction::kUntouched);
    std::vector<std::int8_t> before(cells.size());
    std::vector<bool> resolved(cells.size(), false);
    for (std::size_t i = 0; i < cells.size(); ++i) before[i] = w(cells[i].row, cells[i].col);
    auto clean = [&] { return layer_digest(w) == ll.layer_digest; };

    for (std::size_t i = 0; i < cells.size(); ++i) {
      const auto sealed = registry.sealed_value(l, cells[i].row, cells[i].col);
      if (!sealed) continue;
      resolved[i] = true;
      std::int8_t& v = w(cells[i].row, cells[i].col);
      if (v != *sealed) {
        v = *sealed;
        action[i] = RepairAction::kHoneypotRestore;
      }
    }
    if (!clean()) {
      for (std::size_t i = 0; i < cells.size(); ++i) {
        if (resolved[i]) continue;
        std::int8_t& v = w(cells[i].row, cells[i].col);
        if (ll.bounds.contains(v)) continue;
        const RepairResult rr = msb_unset_repair(v, ll.bounds);
        if (!rr.in_range) continue;
        v = rr.value;
        resolved[i] = true;
        action[i] = RepairAction::kOodRepair;
      }
      if (!clean()) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
          if (resolved[i]) continue;
          std::int8_t& v = w(cells[i].row, cells[i].col);
          if (v == 0) continue;
          v = 0;
          action[i] = RepairAction::kZeroed;
        }
      }
    }
    for (std::size_t i = 0; i < cells.size(); ++i) {
      report.actions.push_back({cells[i], action[i], before[i], w(cells[i].row, cells[i].col)});
    }
  }
  report.verified = verify(model, ledger);
  return report;
}

inline DefenseReport reconstruct(GinModel& model, const SealedVault& vault) {
  return reconstruct(model, vault.ledger(), vault.registry());
}

// ---------------------------------------------------------------------------
// Storage overhead

/// (n + m) cross digests plus the 4-byte layer digest.
constexpr std::size_t hash_storage_bytes(std::size_t rows, std::size_t cols, std::size_t d) {
  return (rows + cols) * d + kLayerDigestBytes;
}

struct OverheadReport {
  std::size_t hash_bytes = 0;
  std::size_t bounds_bytes = 0;
  std::size_t registry_bytes = 0;
  std::size_t weight_bytes = 0;

  std::size_t storage_bytes() const { return hash_bytes + bounds_bytes + registry_bytes; }
  double storage_ratio() const { return static_cast<double>(storage_bytes()) / static_cast<double>(weight_bytes); }
  double hash_ratio() const { return static_cast<double>(hash_bytes) / static_cast<double>(weight_bytes); }
};

/// Registry cost: 4-byte index and 8-byte saliency per honeypot, one byte per
/// sealed value (positions follow from the indices).
inline OverheadReport overhead(const HashLedger& ledger, const HoneypotRegistry* registry = nullptr) {
  OverheadReport r;
  for (const auto& l : ledger.layers) {
    r.hash_bytes += hash_storage_bytes(l.rows, l.cols, l.digest_size);
    r.bounds_bytes += 2;
    r.weight_bytes += l.rows * l.cols;
  }
  if (registry) {
    for (const auto& l : registry->layers) r.registry_bytes += l.indices.size() * (4 + 8) + l.sealed.size();
  }
  return r;
}

}  // namespace crossfire
