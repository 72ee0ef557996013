#pragma once

/**
 * @file gin.hpp
 * @brief Dense Graph Isomorphism Network over INT8 weight matrices.
 *
 * Block k computes, for every node v,
 *   z_v = (1 + eps_k) h_v + sum_{u in N(v)} h_u
 *   h'_v = W2 relu(W1 z_v + b1) + b2
 * and the graph embedding concatenates the per-graph node sums of every
 * layer's states, including the input features. A linear head maps the
 * embedding to one logit per task.
 *
 * Weight layers are numbered W1_0, W2_0, W1_1, ..., W2_{L-1}, head. Every
 * layer is [out x in] and carries a runtime per-input-column multiplier
 * (`input_scale`, all ones unless a honeypot encoding installed one).
 */

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "crossfire/graph.hpp"
#include "crossfire/linalg.hpp"
#include "crossfire/quant.hpp"

namespace crossfire {

struct GinSpec {
  int input_dim = kFeatureDim;
  int hidden = 16;
  int layers = 5;
  int tasks = 1;
  double eps = 0.0;
  /// Multiplier on the Glorot-uniform bound.
  double init_gain = 1.0;
};

struct DenseLinear {
  Matrix weight;
  Vector bias;
  Vector input_scale;
};

/// Real-valued view of a GIN; the arithmetic every forward/backward pass runs on.
struct DenseGin {
  std::vector<double> eps;
  std::vector<DenseLinear> layers;

  int depth() const noexcept { return static_cast<int>(eps.size()); }
  std::size_t head_index() const noexcept { return layers.size() - 1; }
  int input_dim() const { return static_cast<int>(layers.front().weight.cols()); }
};

struct QuantLinear {
  QuantTensor weight;
  Vector bias;
  Vector input_scale;

  friend bool operator==(const QuantLinear& a, const QuantLinear& b) {
    return a.weight == b.weight && a.bias == b.bias && a.input_scale == b.input_scale;
  }
};

/// The deployed network: INT8 weight matrices, full-precision biases.
struct GinModel {
  std::vector<double> eps;
  std::vector<QuantLinear> layers;
  std::uint64_t seed = 0;

  int depth() const noexcept { return static_cast<int>(eps.size()); }
  std::size_t num_layers() const noexcept { return layers.size(); }
  std::size_t head_index() const noexcept { return layers.size() - 1; }
  int input_dim() const { return static_cast<int>(layers.front().weight.cols()); }
  int num_tasks() const { return static_cast<int>(layers.back().weight.rows()); }

  QuantTensor& weight(std::size_t l) { return layers.at(l).weight; }
  const QuantTensor& weight(std::size_t l) const { return layers.at(l).weight; }

  std::size_t num_weight_cells() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weight.size();
    return n;
  }

  DenseGin dense() const {
    DenseGin d;
    d.eps = eps;
    d.layers.reserve(layers.size());
    for (const auto& l : layers) d.layers.push_back({dequantize(l.weight), l.bias, l.input_scale});
    return d;
  }

  /// Quantize every weight matrix with its own max-abs scale.
  static GinModel from_dense(const DenseGin& d, std::uint64_t seed = 0) {
    GinModel m;
    m.eps = d.eps;
    m.seed = seed;
    m.layers.reserve(d.layers.size());
    for (const auto& l : d.layers) m.layers.push_back({quantize(l.weight), l.bias, l.input_scale});
    return m;
  }

  friend bool operator==(const GinModel& a, const GinModel& b) {
    return a.eps == b.eps && a.layers == b.layers && a.seed == b.seed;
  }
};

inline std::size_t block_of_layer(std::size_t layer) noexcept { return layer / 2; }

/// Checks that layer dimensions chain: W1_k in = previous width, W2_k in =
/// W1_k out, head in = input_dim + sum of block widths.
inline void validate_shapes(const DenseGin& m) {
  const auto L = static_cast<std::size_t>(m.depth());
  if (m.layers.size() != 2 * L + 1) {
    throw std::invalid_argument("GIN: expected " + std::to_string(2 * L + 1) + " weight layers, got " +
                                std::to_string(m.layers.size()));
  }
  Eigen::Index width = m.layers.front().weight.cols();
  Eigen::Index readout = width;
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    const auto& lin = m.layers[l];
    const Eigen::Index expected_in = (l == m.head_index()) ? readout : width;
    if (lin.weight.cols() != expected_in || lin.bias.size() != lin.weight.rows() ||
        lin.input_scale.size() != lin.weight.cols()) {
      throw std::invalid_argument("GIN: dimension mismatch at layer " + std::to_string(l));
    }
    width = lin.weight.rows();
    if (l % 2 == 1 && l != m.head_index()) readout += width;
  }
}

/// Where a neuron's outgoing weights live: the consuming layer and the column
/// offset of this layer's outputs within that layer's input.
struct Carrier {
  std::size_t layer = 0;
  Eigen::Index column_offset = 0;
};

inline std::optional<Carrier> carrier_of(const DenseGin& m, std::size_t layer) {
  const auto L = static_cast<std::size_t>(m.depth());
  if (layer >= m.head_index()) return std::nullopt;
  if (layer % 2 == 0) return Carrier{layer + 1, 0};
  if (block_of_layer(layer) + 1 < L) return Carrier{layer + 1, 0};
  Eigen::Index offset = m.input_dim();
  for (std::size_t l = 1; l + 2 < m.layers.size(); l += 2) offset += m.layers[l].weight.rows();
  return Carrier{m.head_index(), offset};
}

inline DenseGin random_dense_gin(const GinSpec& spec, std::uint64_t seed) {
  if (spec.input_dim <= 0 || spec.hidden <= 0 || spec.layers <= 0 || spec.tasks <= 0) {
    throw std::invalid_argument("GinSpec: all dimensions must be positive");
  }
  if (!(spec.init_gain > 0.0)) throw std::invalid_argument("GinSpec: init_gain must be positive");
  std::mt19937_64 rng(seed);
  auto make = [&rng, gain = spec.init_gain](int out, int in) {
    const double bound = gain * std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> u(-bound, bound);
    DenseLinear lin;
    lin.weight.resize(out, in);
    for (Eigen::Index i = 0; i < lin.weight.size(); ++i) lin.weight.data()[i] = u(rng);
    lin.bias = Vector::Zero(out);
    lin.input_scale = Vector::Ones(in);
    return lin;
  };
  DenseGin d;
  d.eps.assign(static_cast<std::size_t>(spec.layers), spec.eps);
  int width = spec.input_dim;
  int readout = spec.input_dim;
  for (int k = 0; k < spec.layers; ++k) {
    d.layers.push_back(make(spec.hidden, width));
    d.layers.push_back(make(spec.hidden, spec.hidden));
    width = spec.hidden;
    readout += spec.hidden;
  }
  d.layers.push_back(make(spec.tasks, readout));
  return d;
}

inline GinModel random_gin(const GinSpec& spec, std::uint64_t seed) {
  return GinModel::from_dense(random_dense_gin(spec, seed), seed);
}

// ---------------------------------------------------------------------------
// Forward

struct BlockCache {
  Matrix input;   // h^{k-1}
  Matrix agg;     // (1+eps) h + A h, then column-scaled for W1
  Matrix pre;     // W1 agg + b1
  Matrix act;     // relu(pre), column-scaled for W2
  Matrix output;  // h^k
};

struct ForwardCache {
  std::vector<BlockCache> blocks;
  Matrix readout;
  Matrix readout_scaled;
  Matrix logits;
};

inline Matrix aggregate(const Matrix& h, const GraphBatch& b, double eps) {
  if (static_cast<std::size_t>(h.rows()) != b.num_nodes()) {
    throw std::invalid_argument("aggregate: node count mismatch");
  }
  Matrix z = (1.0 + eps) * h;
  for (std::size_t v = 0; v < b.neighbors.size(); ++v) {
    for (int u : b.neighbors[v]) z.row(static_cast<Eigen::Index>(v)) += h.row(u);
  }
  return z;
}

inline Matrix linear_forward(const DenseLinear& lin, const Matrix& x_scaled) {
  Matrix y = x_scaled * lin.weight.transpose();
  y.rowwise() += lin.bias.transpose();
  return y;
}

inline Matrix scale_columns(const Matrix& x, const Vector& s) { return x * s.asDiagonal(); }

inline Matrix gin_layer_forward(const DenseLinear& mlp1, const DenseLinear& mlp2, double eps,
                                const Matrix& h, const GraphBatch& batch, BlockCache* cache = nullptr) {
  if (h.cols() != mlp1.weight.cols() || mlp2.weight.cols() != mlp1.weight.rows()) {
    throw std::invalid_argument("gin_layer_forward: dimension mismatch");
  }
  Matrix agg = scale_columns(aggregate(h, batch, eps), mlp1.input_scale);
  Matrix pre = linear_forward(mlp1, agg);
  Matrix act = scale_columns(pre.cwiseMax(0.0), mlp2.input_scale);
  Matrix out = linear_forward(mlp2, act);
  if (cache) {
    cache->input = h;
    cache->agg = std::move(agg);
    cache->pre = std::move(pre);
    cache->act = std::move(act);
    cache->output = out;
  }
  return out;
}

/// Per graph, the concatenation over layers of the node-sum of that layer's states.
inline Matrix readout(std::span<const Matrix> states, const GraphBatch& batch) {
  Eigen::Index width = 0;
  for (const auto& s : states) width += s.cols();
  Matrix out = Matrix::Zero(batch.num_graphs, width);
  Eigen::Index offset = 0;
  for (const auto& s : states) {
    for (std::size_t v = 0; v < batch.num_nodes(); ++v) {
      out.block(batch.graph_of_node[v], offset, 1, s.cols()) += s.row(static_cast<Eigen::Index>(v));
    }
    offset += s.cols();
  }
  return out;
}

inline Matrix forward(const DenseGin& m, const GraphBatch& batch, ForwardCache* cache = nullptr) {
  if (batch.node_features.cols() != m.input_dim()) {
    throw std::invalid_argument("forward: feature dimension mismatch");
  }
  std::vector<Matrix> states;
  states.reserve(static_cast<std::size_t>(m.depth()) + 1);
  states.push_back(batch.node_features);
  if (cache) cache->blocks.assign(static_cast<std::size_t>(m.depth()), {});
  for (int k = 0; k < m.depth(); ++k) {
    const auto ku = static_cast<std::size_t>(k);
    states.push_back(gin_layer_forward(m.layers[2 * ku], m.layers[2 * ku + 1], m.eps[ku], states.back(),
                                       batch, cache ? &cache->blocks[ku] : nullptr));
  }
  const auto& head = m.layers[m.head_index()];
  Matrix hg = readout(states, batch);
  if (hg.cols() != head.weight.cols()) throw std::invalid_argument("forward: head dimension mismatch");
  Matrix hg_scaled = scale_columns(hg, head.input_scale);
  Matrix logits = linear_forward(head, hg_scaled);
  if (cache) {
    cache->readout = std::move(hg);
    cache->readout_scaled = std::move(hg_scaled);
    cache->logits = logits;
  }
  return logits;
}

inline Matrix forward(const GinModel& m, const GraphBatch& batch) { return forward(m.dense(), batch); }

inline double sigmoid(double z) noexcept {
  return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

inline double softplus(double z) noexcept { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

inline Matrix sigmoid(const Matrix& z) { return z.unaryExpr([](double x) { return sigmoid(x); }); }

// ---------------------------------------------------------------------------
// Losses (all are means over graph x task elements)

enum class LossKind { kBce, kL1, kKl };

inline std::string to_string(LossKind k) {
  switch (k) {
    case LossKind::kBce: return "bce";
    case LossKind::kL1: return "l1";
    case LossKind::kKl: return "kl";
  }
  return "?";
}

inline double bce_with_logits(const Matrix& z, const Matrix& y, Matrix* dz = nullptr) {
  if (z.rows() != y.rows() || z.cols() != y.cols()) throw std::invalid_argument("bce: shape mismatch");
  const double n = static_cast<double>(z.size());
  double loss = 0.0;
  if (dz) dz->resize(z.rows(), z.cols());
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    const double zi = z.data()[i];
    const double yi = y.data()[i];
    loss += softplus(zi) - yi * zi;
    if (dz) dz->data()[i] = (sigmoid(zi) - yi) / n;
  }
  return loss / n;
}

/// Mean absolute difference of sigmoid outputs.
inline double l1_divergence(const Matrix& za, const Matrix& zb, Matrix* dza = nullptr, Matrix* dzb = nullptr) {
  if (za.rows() != zb.rows() || za.cols() != zb.cols()) throw std::invalid_argument("l1: shape mismatch");
  const double n = static_cast<double>(za.size());
  double loss = 0.0;
  if (dza) dza->resize(za.rows(), za.cols());
  if (dzb) dzb->resize(zb.rows(), zb.cols());
  for (Eigen::Index i = 0; i < za.size(); ++i) {
    const double pa = sigmoid(za.data()[i]);
    const double pb = sigmoid(zb.data()[i]);
    const double diff = pa - pb;
    loss += std::abs(diff);
    const double sgn = diff > 0 ? 1.0 : (diff < 0 ? -1.0 : 0.0);
    if (dza) dza->data()[i] = sgn * pa * (1 - pa) / n;
    if (dzb) dzb->data()[i] = -sgn * pb * (1 - pb) / n;
  }
  return loss / n;
}

/// Mean Bernoulli KL(sigmoid(za) || sigmoid(zb)).
inline double kl_divergence(const Matrix& za, const Matrix& zb, Matrix* dza = nullptr, Matrix* dzb = nullptr) {
  if (za.rows() != zb.rows() || za.cols() != zb.cols()) throw std::invalid_argument("kl: shape mismatch");
  const double n = static_cast<double>(za.size());
  double loss = 0.0;
  if (dza) dza->resize(za.rows(), za.cols());
  if (dzb) dzb->resize(zb.rows(), zb.cols());
  for (Eigen::Index i = 0; i < za.size(); ++i) {
    const double a = za.data()[i];
    const double b = zb.data()[i];
    const double pa = sigmoid(a);
    const double pb = sigmoid(b);
    // log p = -softplus(-z), log(1-p) = -softplus(z)
    loss += pa * (softplus(-b) - softplus(-a)) + (1 - pa) * (softplus(b) - softplus(a));
    if (dza) dza->data()[i] = (a - b) * pa * (1 - pa) / n;
    if (dzb) dzb->data()[i] = (pb - pa) / n;
  }
  return std::max(loss / n, 0.0);
}

/// Either ground-truth/pseudo labels (BCE) or a second batch whose outputs
/// are the reference distribution (l1 / KL).
using LossTarget = std::variant<std::reference_wrapper<const Matrix>, std::reference_wrapper<const GraphBatch>>;

struct GradientMap {
  std::vector<Matrix> weights;
  std::vector<Vector> biases;

  static GradientMap zeros_like(const DenseGin& m) {
    GradientMap g;
    for (const auto& l : m.layers) {
      g.weights.push_back(Matrix::Zero(l.weight.rows(), l.weight.cols()));
      g.biases.push_back(Vector::Zero(l.bias.size()));
    }
    return g;
  }

  GradientMap& operator+=(const GradientMap& o) {
    for (std::size_t i = 0; i < weights.size(); ++i) {
      weights[i] += o.weights[i];
      biases[i] += o.biases[i];
    }
    return *this;
  }
};

struct BackwardResult {
  double loss = 0.0;
  GradientMap grads;
};

namespace detail {

inline void check_target(const DenseGin& m, const GraphBatch& batch, const LossTarget& target, LossKind kind) {
  if (kind == LossKind::kBce) {
    const auto* labels = std::get_if<std::reference_wrapper<const Matrix>>(&target);
    if (!labels) throw std::invalid_argument("BCE loss requires label targets");
    const Matrix& y = labels->get();
    if (y.rows() != batch.num_graphs || y.cols() != static_cast<Eigen::Index>(m.layers.back().weight.rows())) {
      throw std::invalid_argument("BCE targets must be num_graphs x num_tasks");
    }
  } else {
    const auto* ref = std::get_if<std::reference_wrapper<const GraphBatch>>(&target);
    if (!ref) throw std::invalid_argument("divergence losses require a reference batch target");
    if (ref->get().num_graphs != batch.num_graphs) {
      throw std::invalid_argument("divergence losses require batches with equal graph counts");
    }
  }
}

inline void backprop(const DenseGin& m, const GraphBatch& batch, const ForwardCache& cache, const Matrix& dlogits,
                     GradientMap& acc) {
  const std::size_t head = m.head_index();
  const auto& hl = m.layers[head];
  acc.weights[head] += dlogits.transpose() * cache.readout_scaled;
  acc.biases[head] += dlogits.colwise().sum().transpose();
  const Matrix dreadout = scale_columns(dlogits * hl.weight, hl.input_scale);

  // Readout segment offsets: input features, then each block's output width.
  std::vector<Eigen::Index> offsets;
  Eigen::Index off = m.input_dim();
  for (const auto& bc : cache.blocks) {
    offsets.push_back(off);
    off += bc.output.cols();
  }

  Matrix dh;  // gradient w.r.t. the current block's output
  for (int k = m.depth() - 1; k >= 0; --k) {
    const auto ku = static_cast<std::size_t>(k);
    const BlockCache& bc = cache.blocks[ku];
    const auto& w1 = m.layers[2 * ku];
    const auto& w2 = m.layers[2 * ku + 1];
    Matrix dout = Matrix::Zero(bc.output.rows(), bc.output.cols());
    for (std::size_t v = 0; v < batch.num_nodes(); ++v) {
      dout.row(static_cast<Eigen::Index>(v)) += dreadout.block(batch.graph_of_node[v], offsets[ku], 1, bc.output.cols());
    }
    if (dh.size() > 0) dout += dh;

    acc.weights[2 * ku + 1] += dout.transpose() * bc.act;
    acc.biases[2 * ku + 1] += dout.colwise().sum().transpose();
    Matrix dpre = scale_columns(dout * w2.weight, w2.input_scale);
    for (Eigen::Index i = 0; i < dpre.size(); ++i) {
      if (!(bc.pre.data()[i] > 0.0)) dpre.data()[i] = 0.0;
    }
    acc.weights[2 * ku] += dpre.transpose() * bc.agg;
    acc.biases[2 * ku] += dpre.colwise().sum().transpose();
    const Matrix dz = scale_columns(dpre * w1.weight, w1.input_scale);
    // Neighbour lists are symmetric, so the adjoint of aggregation is aggregation.
    dh = aggregate(dz, batch, m.eps[ku]);
  }
}

}  // namespace detail

/// Loss of `batch` against `target` without gradients.
inline double objective(const DenseGin& m, const GraphBatch& batch, const LossTarget& target, LossKind kind) {
  detail::check_target(m, batch, target, kind);
  const Matrix za = forward(m, batch);
  if (kind == LossKind::kBce) return bce_with_logits(za, std::get<0>(target).get());
  const Matrix zb = forward(m, std::get<1>(target).get());
  return kind == LossKind::kL1 ? l1_divergence(za, zb) : kl_divergence(za, zb);
}

/// Gradients w.r.t. every dequantized weight matrix and bias. For the
/// divergence losses both branches depend on the weights and are summed.
inline BackwardResult backward(const DenseGin& m, const GraphBatch& batch, const LossTarget& target, LossKind kind) {
  detail::check_target(m, batch, target, kind);
  BackwardResult r;
  r.grads = GradientMap::zeros_like(m);
  ForwardCache ca;
  const Matrix za = forward(m, batch, &ca);
  if (kind == LossKind::kBce) {
    Matrix dz;
    r.loss = bce_with_logits(za, std::get<0>(target).get(), &dz);
    detail::backprop(m, batch, ca, dz, r.grads);
    return r;
  }
  const GraphBatch& other = std::get<1>(target).get();
  ForwardCache cb;
  const Matrix zb = forward(m, other, &cb);
  Matrix dza, dzb;
  r.loss = kind == LossKind::kL1 ? l1_divergence(za, zb, &dza, &dzb) : kl_divergence(za, zb, &dza, &dzb);
  detail::backprop(m, batch, ca, dza, r.grads);
  detail::backprop(m, other, cb, dzb, r.grads);
  return r;
}

}  // namespace crossfire
