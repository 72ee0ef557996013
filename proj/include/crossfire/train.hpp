#pragma once

/**
 * @file train.hpp
 * @brief Quantization-aware training with a straight-through estimator.
 *
 * Real-valued master weights are re-quantized on every step; gradients are
 * taken w.r.t. the dequantized weights and passed through the quantizer with
 * the clipped STE. Adam updates the masters; biases stay full precision.
 */

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "crossfire/gin.hpp"
#include "crossfire/graph.hpp"
#include "crossfire/metrics.hpp"
#include "crossfire/quant.hpp"

namespace crossfire {

struct TrainOptions {
  int epochs = 30;
  double lr = 1e-3;
  int batch_size = 32;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  /// Sparsity-promoting penalty l1 * sum|W| on the master weights.
  double l1 = 0.0;
  std::uint64_t seed = 0;
};

struct TrainResult {
  GinModel model;
  /// Mean BCE over the training split: entry 0 before training, entry e after epoch e.
  std::vector<double> epoch_losses;
};

namespace detail {

struct AdamSlot {
  Matrix m, v;
  explicit AdamSlot(const Matrix& like) : m(Matrix::Zero(like.rows(), like.cols())), v(m) {}
};

inline void adam_step(Matrix& param, const Matrix& grad, AdamSlot& slot, const TrainOptions& o, int t) {
  slot.m = o.beta1 * slot.m + (1 - o.beta1) * grad;
  slot.v = o.beta2 * slot.v + (1 - o.beta2) * grad.cwiseProduct(grad);
  const double c1 = 1 - std::pow(o.beta1, t);
  const double c2 = 1 - std::pow(o.beta2, t);
  for (Eigen::Index i = 0; i < param.size(); ++i) {
    const double mh = slot.m.data()[i] / c1;
    const double vh = slot.v.data()[i] / c2;
    param.data()[i] -= o.lr * mh / (std::sqrt(vh) + o.adam_eps);
  }
}

inline GinModel quantize_masters(const DenseGin& master, std::uint64_t seed) {
  return GinModel::from_dense(master, seed);
}

}  // namespace detail

inline double dataset_loss(const GinModel& model, const Dataset& ds, std::span<const std::size_t> indices) {
  const GraphBatch b = make_batch(ds, indices);
  return bce_with_logits(forward(model, b), b.labels);
}

inline TrainResult train_ste(const GinModel& init, const Dataset& ds, std::span<const std::size_t> train_idx,
                             const TrainOptions& opts) {
  if (train_idx.empty() || ds.graphs.empty()) throw std::invalid_argument("train_ste: empty dataset");
  if (opts.batch_size <= 0 || opts.epochs < 0) throw std::invalid_argument("train_ste: invalid options");

  DenseGin master = init.dense();
  std::vector<detail::AdamSlot> wslots, bslots;
  for (const auto& l : master.layers) {
    wslots.emplace_back(l.weight);
    bslots.emplace_back(Matrix(l.bias));
  }

  TrainResult result;
  result.epoch_losses.push_back(dataset_loss(init, ds, train_idx));

  std::mt19937_64 rng(opts.seed);
  std::vector<std::size_t> order(train_idx.begin(), train_idx.end());
  int step = 0;
  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(opts.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(opts.batch_size));
      const GraphBatch b = make_batch(ds, std::span<const std::size_t>(order.data() + start, end - start));

      DenseGin fake_quant = master;
      std::vector<double> scales;
      for (auto& l : fake_quant.layers) {
        const QuantTensor q = quantize(l.weight);
        scales.push_back(q.scale());
        l.weight = dequantize(q);
      }
      const BackwardResult br = backward(fake_quant, b, std::cref(b.labels), LossKind::kBce);
      ++step;
      for (std::size_t i = 0; i < master.layers.size(); ++i) {
        auto& l = master.layers[i];
        Matrix g = ste_backward(br.grads.weights[i], l.weight, kDefaultQmin, kDefaultQmax, scales[i]);
        if (opts.l1 > 0.0) g += opts.l1 * l.weight.cwiseSign();
        detail::adam_step(l.weight, g, wslots[i], opts, step);
        Matrix bias = l.bias;
        detail::adam_step(bias, Matrix(br.grads.biases[i]), bslots[i], opts, step);
        l.bias = bias;
      }
    }
    result.epoch_losses.push_back(dataset_loss(detail::quantize_masters(master, init.seed), ds, train_idx));
  }
  result.model = detail::quantize_masters(master, init.seed);
  return result;
}

/// Mean over tasks of AUROC or AP on `indices`, scored by the raw logits.
enum class QualityMetric { kAuroc, kAp };

inline double model_quality(const GinModel& model, const Dataset& ds, std::span<const std::size_t> indices,
                            QualityMetric metric = QualityMetric::kAuroc) {
  const GraphBatch b = make_batch(ds, indices);
  const Matrix logits = forward(model, b);
  double total = 0.0;
  int counted = 0;
  for (Eigen::Index t = 0; t < logits.cols(); ++t) {
    std::vector<double> scores(static_cast<std::size_t>(logits.rows()));
    std::vector<int> labels(scores.size());
    for (Eigen::Index g = 0; g < logits.rows(); ++g) {
      scores[static_cast<std::size_t>(g)] = logits(g, t);
      labels[static_cast<std::size_t>(g)] = b.labels(g, t) > 0.5 ? 1 : 0;
    }
    total += metric == QualityMetric::kAuroc ? auroc(scores, labels) : average_precision(scores, labels);
    ++counted;
  }
  return total / counted;
}

}  // namespace crossfire
