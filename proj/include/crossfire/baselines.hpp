#pragma once

// Comparison defenses: group-checksum zeroing (RADAR) and uniform-gain
// honeypots with checksum refresh (NeuroPots). Neither can certify a full
// restoration; the harness decides that from ground truth.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "crossfire/blake2b.hpp"
#include "crossfire/crossfire.hpp"
#include "crossfire/gin.hpp"
#include "crossfire/quant.hpp"

namespace crossfire {

// ---------------------------------------------------------------------------
// RADAR

enum class RadarChecksum { kFold, kAdditive };

inline std::string to_string(RadarChecksum c) { return c == RadarChecksum::kFold ? "fold" : "additive"; }

inline RadarChecksum parse_radar_checksum(const std::string& s) {
  if (s == "fold") return RadarChecksum::kFold;
  if (s == "additive") return RadarChecksum::kAdditive;
  throw std::invalid_argument("unknown radar checksum '" + s + "'");
}

/// kFold: XOR of the group's bytes, then XOR of its sig_bits-wide slices.
/// kAdditive: group sum modulo 2^sig_bits.
inline std::uint8_t radar_signature(std::span<const std::int8_t> group, int sig_bits, RadarChecksum kind) {
  const unsigned mask = (1u << sig_bits) - 1u;
  if (kind == RadarChecksum::kAdditive) {
    long long sum = 0;
    for (auto v : group) sum += v;
    const long long mod = 1LL << sig_bits;
    return static_cast<std::uint8_t>(((sum % mod) + mod) % mod);
  }
  unsigned x = 0;
  for (auto v : group) x ^= static_cast<std::uint8_t>(v);
  unsigned folded = 0;
  for (; x != 0; x >>= sig_bits) folded ^= x & mask;
  return static_cast<std::uint8_t>(folded);
}

struct RadarLayer {
  std::vector<std::uint8_t> signatures;

  friend bool operator==(const RadarLayer&, const RadarLayer&) = default;
};

struct RadarState {
  std::size_t group_size = 16;
  int sig_bits = 2;
  RadarChecksum checksum = RadarChecksum::kFold;
  std::vector<RadarLayer> layers;

  friend bool operator==(const RadarState&, const RadarState&) = default;
};

inline std::size_t radar_group_count(std::size_t cells, std::size_t group_size) {
  return (cells + group_size - 1) / group_size;
}

inline std::vector<std::uint8_t> radar_layer_signatures(const QuantTensor& w, std::size_t group_size, int sig_bits,
                                                        RadarChecksum kind) {
  const auto v = w.values();
  std::vector<std::uint8_t> out;
  out.reserve(radar_group_count(v.size(), group_size));
  for (std::size_t start = 0; start < v.size(); start += group_size) {
    out.push_back(radar_signature(v.subspan(start, std::min(group_size, v.size() - start)), sig_bits, kind));
  }
  return out;
}

inline RadarState radar_protect(const GinModel& model, std::size_t group_size = 16, int sig_bits = 2,
                                RadarChecksum kind = RadarChecksum::kFold) {
  if (group_size < 1) throw std::invalid_argument("radar_protect: group_size must be >= 1");
  if (sig_bits != 2 && sig_bits != 3) throw std::invalid_argument("radar_protect: sig_bits must be 2 or 3");
  RadarState s{group_size, sig_bits, kind, {}};
  for (const auto& l : model.layers) s.layers.push_back({radar_layer_signatures(l.weight, group_size, sig_bits, kind)});
  return s;
}

struct RadarGroup {
  std::size_t layer = 0;
  std::size_t group = 0;

  auto operator<=>(const RadarGroup&) const = default;
};

struct RadarReport {
  std::vector<RadarGroup> flagged_groups;  // sorted
  std::size_t zeroed_cells = 0;

  bool attack_detected() const noexcept { return !flagged_groups.empty(); }
  bool group_flagged(std::size_t layer, std::size_t group) const {
    return std::binary_search(flagged_groups.begin(), flagged_groups.end(), RadarGroup{layer, group});
  }
};

inline std::size_t radar_group_of(const QuantTensor& w, std::size_t row, std::size_t col, std::size_t group_size) {
  return (row * w.cols() + col) / group_size;
}

/// Zeroes every group whose signature no longer matches.
inline RadarReport radar_detect_and_zero(GinModel& model, const RadarState& state) {
  if (state.layers.size() != model.num_layers()) throw std::invalid_argument("radar: state/model layer count mismatch");
  RadarReport report;
  for (std::size_t l = 0; l < model.num_layers(); ++l) {
    QuantTensor& w = model.weight(l);
    const auto now = radar_layer_signatures(w, state.group_size, state.sig_bits, state.checksum);
    if (now.size() != state.layers[l].signatures.size()) throw std::invalid_argument("radar: layer shape changed");
    auto values = w.values();
    for (std::size_t g = 0; g < now.size(); ++g) {
      if (now[g] == state.layers[l].signatures[g]) continue;
      report.flagged_groups.push_back({l, g});
      const std::size_t start = g * state.group_size;
      const std::size_t end = std::min(values.size(), start + state.group_size);
      for (std::size_t i = start; i < end; ++i) {
        if (values[i] != 0) ++report.zeroed_cells;
        values[i] = 0;
      }
    }
  }
  return report;
}

/// Whether a single flip with value change `delta` leaves an additive
/// signature unchanged.
constexpr bool additive_signature_blind(int delta, int sig_bits) noexcept { return delta % (1 << sig_bits) == 0; }

// ---------------------------------------------------------------------------
// NeuroPots

enum class HoneypotSelection { kRandom, kActivationRank };

inline std::string to_string(HoneypotSelection s) { return s == HoneypotSelection::kRandom ? "random" : "activation"; }

inline HoneypotSelection parse_honeypot_selection(const std::string& s) {
  if (s == "random") return HoneypotSelection::kRandom;
  if (s == "activation") return HoneypotSelection::kActivationRank;
  throw std::invalid_argument("unknown honeypot selection '" + s + "'");
}

struct NeuropotsHoneypot {
  std::size_t layer = 0;
  std::size_t neuron = 0;
  std::vector<CellRef> cells;  // own row, then the carrier column
  std::vector<std::int8_t> sealed;
  std::uint8_t checksum = 0;

  friend bool operator==(const NeuropotsHoneypot&, const NeuropotsHoneypot&) = default;
};

struct NeuropotsState {
  double gamma = 2.0;
  std::vector<std::vector<std::size_t>> indices;  // per weight layer
  std::vector<NeuropotsHoneypot> honeypots;

  friend bool operator==(const NeuropotsState&, const NeuropotsState&) = default;
};

inline std::uint8_t honeypot_checksum(std::span<const std::int8_t> values) {
  const std::span<const std::uint8_t> bytes{reinterpret_cast<const std::uint8_t*>(values.data()), values.size()};
  return Blake2b::digest(bytes, 1)[0];
}

inline std::vector<std::int8_t> read_cells(const GinModel& m, std::span<const CellRef> cells) {
  std::vector<std::int8_t> out;
  out.reserve(cells.size());
  for (const auto& c : cells) out.push_back(m.weight(c.layer)(c.row, c.col));
  return out;
}

/// Mean absolute post-activation per neuron of every weight layer over `batches`.
inline std::vector<Vector> neuron_activation_magnitude(const DenseGin& m, std::span<const GraphBatch> batches) {
  std::vector<Vector> acc;
  for (const auto& l : m.layers) acc.push_back(Vector::Zero(l.weight.rows()));
  double rows = 0;
  std::vector<double> node_rows(m.layers.size(), 0.0);
  for (const auto& b : batches) {
    ForwardCache cache;
    forward(m, b, &cache);
    for (std::size_t k = 0; k < cache.blocks.size(); ++k) {
      const auto& bc = cache.blocks[k];
      acc[2 * k] += bc.pre.cwiseMax(0.0).colwise().sum().transpose();
      acc[2 * k + 1] += bc.output.cwiseAbs().colwise().sum().transpose();
      node_rows[2 * k] += static_cast<double>(bc.pre.rows());
      node_rows[2 * k + 1] += static_cast<double>(bc.output.rows());
    }
    acc.back() += cache.logits.cwiseAbs().colwise().sum().transpose();
    rows += static_cast<double>(cache.logits.rows());
  }
  node_rows.back() = rows;
  for (std::size_t l = 0; l < acc.size(); ++l) {
    if (node_rows[l] > 0) acc[l] /= node_rows[l];
  }
  return acc;
}

/// round(n * p), which may be zero for narrow layers.
inline std::size_t neuropots_honeypot_count(std::size_t neurons, double p) {
  return std::min(neurons, static_cast<std::size_t>(std::llround(static_cast<double>(neurons) * p)));
}

/// Uniform-gain honeypots. `batches` feed activation ranking and may be
/// empty for random selection.
inline NeuropotsState neuropots_protect(GinModel& model, double p, double gamma, HoneypotSelection selection,
                                        std::uint64_t seed, std::span<const GraphBatch> batches = {}) {
  if (!(p > 0.0 && p <= 1.0)) throw std::invalid_argument("neuropots_protect: require 0 < p <= 1");
  if (!(gamma >= 1.0)) throw std::invalid_argument("neuropots_protect: require gamma >= 1");
  if (selection == HoneypotSelection::kActivationRank && batches.empty()) {
    throw std::invalid_argument("neuropots_protect: activation ranking needs batches");
  }
  DenseGin dense = model.dense();
  std::vector<Vector> activation;
  if (selection == HoneypotSelection::kActivationRank) activation = neuron_activation_magnitude(dense, batches);

  std::mt19937_64 rng(seed);
  std::vector<HoneypotLayer> layers(dense.layers.size());
  NeuropotsState state;
  state.gamma = gamma;
  for (std::size_t l = 0; l < dense.layers.size(); ++l) {
    const auto n = static_cast<std::size_t>(dense.layers[l].weight.rows());
    const std::size_t k = neuropots_honeypot_count(n, p);
    std::vector<std::size_t> idx;
    if (selection == HoneypotSelection::kRandom) {
      std::vector<std::size_t> all(n);
      std::iota(all.begin(), all.end(), std::size_t{0});
      std::shuffle(all.begin(), all.end(), rng);
      idx.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k));
      std::sort(idx.begin(), idx.end());
    } else {
      idx = top_k_neurons(activation[l], k);
    }
    layers[l].indices = idx;
    layers[l].gamma_l = gamma;
    layers[l].saliency = Vector::Constant(static_cast<Eigen::Index>(k), gamma);
    state.indices.push_back(std::move(idx));
  }
  encode_honeypots(dense, layers);
  model = GinModel::from_dense(dense, model.seed);

  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto carrier = carrier_of(dense, l);
    for (auto h : state.indices[l]) {
      NeuropotsHoneypot hp;
      hp.layer = l;
      hp.neuron = h;
      for (std::size_t c = 0; c < model.weight(l).cols(); ++c) hp.cells.push_back({l, h, c});
      if (carrier) {
        const auto col = static_cast<std::size_t>(carrier->column_offset) + h;
        for (std::size_t r = 0; r < model.weight(carrier->layer).rows(); ++r) hp.cells.push_back({carrier->layer, r, col});
      }
      hp.sealed = read_cells(model, hp.cells);
      hp.checksum = honeypot_checksum(hp.sealed);
      state.honeypots.push_back(std::move(hp));
    }
  }
  return state;
}

struct NeuropotsReport {
  std::vector<std::size_t> flagged_honeypots;  // indices into NeuropotsState::honeypots
  std::vector<CellRef> flagged_cells;          // sorted, cells of flagged honeypots
  std::size_t restored_cells = 0;

  bool attack_detected() const noexcept { return !flagged_honeypots.empty(); }
  bool cell_flagged(const CellRef& c) const {
    return std::binary_search(flagged_cells.begin(), flagged_cells.end(), c);
  }
};

/// Checksums each honeypot; on mismatch restores all of its sealed entries.
inline NeuropotsReport neuropots_detect_and_refresh(GinModel& model, const NeuropotsState& state) {
  NeuropotsReport report;
  for (std::size_t i = 0; i < state.honeypots.size(); ++i) {
    const auto& hp = state.honeypots[i];
    const auto now = read_cells(model, hp.cells);
    if (honeypot_checksum(now) == hp.checksum) continue;
    report.flagged_honeypots.push_back(i);
    for (std::size_t j = 0; j < hp.cells.size(); ++j) {
      const auto& c = hp.cells[j];
      std::int8_t& v = model.weight(c.layer)(c.row, c.col);
      if (v != hp.sealed[j]) {
        v = hp.sealed[j];
        ++report.restored_cells;
      }
      report.flagged_cells.push_back(c);
    }
  }
  std::sort(report.flagged_cells.begin(), report.flagged_cells.end());
  report.flagged_cells.erase(std::unique(report.flagged_cells.begin(), report.flagged_cells.end()),
                             report.flagged_cells.end());
  return report;
}

}  // namespace crossfire
