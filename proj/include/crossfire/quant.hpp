#pragma once

/**
 * @file quant.hpp
 * @brief INT8 scale quantization and two's-complement bit manipulation.
 *
 * Quantization scheme:
 *   q   = clip(round(w / scale), qmin, qmax)     (ties away from zero)
 *   w'  = q * scale
 *
 * Bit 7 is the sign bit. Flips may push a value outside [qmin, qmax]; the
 * tensor deliberately tolerates that so attacks can be represented exactly.
 */

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "crossfire/linalg.hpp"

namespace crossfire {

inline constexpr int kDefaultQmin = -127;
inline constexpr int kDefaultQmax = 127;

struct WeightBounds {
  std::int8_t lower = 0;
  std::int8_t upper = 0;

  constexpr bool contains(int v) const noexcept { return lower <= v && v <= upper; }
  friend bool operator==(const WeightBounds&, const WeightBounds&) = default;
};

/// One flipped bit. `after == before ^ (1 << bit)` always holds.
struct BitFlipEvent {
  std::size_t layer = 0;
  std::size_t row = 0;
  std::size_t col = 0;
  int bit = 0;
  std::int8_t before = 0;
  std::int8_t after = 0;

  friend bool operator==(const BitFlipEvent&, const BitFlipEvent&) = default;
};

constexpr std::int8_t xor_bit(std::int8_t v, int bit) noexcept {
  return static_cast<std::int8_t>(static_cast<std::uint8_t>(v) ^ static_cast<std::uint8_t>(1u << bit));
}

constexpr bool bit_is_set(std::int8_t v, int bit) noexcept {
  return (static_cast<std::uint8_t>(v) >> bit) & 1u;
}

/// n x m matrix of 8-bit two's-complement values, row-major, plus its scale
/// and clip bounds.
class QuantTensor {
 public:
  QuantTensor() = default;

  QuantTensor(std::size_t rows, std::size_t cols, double scale,
              int qmin = kDefaultQmin, int qmax = kDefaultQmax)
      : rows_(rows), cols_(cols), scale_(scale),
        qmin_(static_cast<std::int8_t>(qmin)), qmax_(static_cast<std::int8_t>(qmax)),
        values_(rows * cols, 0) {
    if (!(scale > 0.0) || !std::isfinite(scale)) {
      throw std::invalid_argument("QuantTensor: scale must be positive and finite");
    }
    if (qmin < -128 || qmax > 127 || qmin > qmax) {
      throw std::invalid_argument("QuantTensor: require -128 <= qmin <= qmax <= 127");
    }
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }
  double scale() const noexcept { return scale_; }
  int qmin() const noexcept { return qmin_; }
  int qmax() const noexcept { return qmax_; }

  std::int8_t at(std::size_t r, std::size_t c) const {
    check_index(r, c);
    return values_[r * cols_ + c];
  }
  std::int8_t& at(std::size_t r, std::size_t c) {
    check_index(r, c);
    return values_[r * cols_ + c];
  }

  std::int8_t operator()(std::size_t r, std::size_t c) const noexcept { return values_[r * cols_ + c]; }
  std::int8_t& operator()(std::size_t r, std::size_t c) noexcept { return values_[r * cols_ + c]; }

  std::span<const std::int8_t> values() const noexcept { return values_; }
  std::span<std::int8_t> values() noexcept { return values_; }

  /// Canonical serialization: row-major, one byte per element.
  std::span<const std::uint8_t> bytes() const noexcept {
    return {reinterpret_cast<const std::uint8_t*>(values_.data()), values_.size()};
  }

  friend bool operator==(const QuantTensor&, const QuantTensor&) = default;

 private:
  void check_index(std::size_t r, std::size_t c) const {
    if (r >= rows_ || c >= cols_) {
      throw std::invalid_argument("QuantTensor: index (" + std::to_string(r) + "," +
                                  std::to_string(c) + ") outside " + std::to_string(rows_) +
                                  "x" + std::to_string(cols_));
    }
  }

  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  double scale_ = 1.0;
  std::int8_t qmin_ = kDefaultQmin;
  std::int8_t qmax_ = kDefaultQmax;
  std::vector<std::int8_t> values_;
};

/// Symmetric max-abs scale, max|W| / qmax. An all-zero matrix gets scale 1.
inline double fit_scale(const Matrix& w, int qmax = kDefaultQmax) {
  const double max_abs = w.size() == 0 ? 0.0 : w.cwiseAbs().maxCoeff();
  if (!std::isfinite(max_abs)) {
    throw std::invalid_argument("fit_scale: non-finite weight");
  }
  return max_abs > 0.0 ? max_abs / static_cast<double>(qmax) : 1.0;
}

inline QuantTensor quantize(const Matrix& w, double scale, int qmin = kDefaultQmin,
                            int qmax = kDefaultQmax) {
  if (!(scale > 0.0)) {
    throw std::invalid_argument("quantize: scale must be positive");
  }
  QuantTensor out(static_cast<std::size_t>(w.rows()), static_cast<std::size_t>(w.cols()), scale,
                  qmin, qmax);
  for (Eigen::Index r = 0; r < w.rows(); ++r) {
    for (Eigen::Index c = 0; c < w.cols(); ++c) {
      const double x = w(r, c);
      if (!std::isfinite(x)) {
        throw std::invalid_argument("quantize: non-finite input element");
      }
      // std::round rounds half away from zero.
      const double q = std::clamp(std::round(x / scale), static_cast<double>(qmin),
                                  static_cast<double>(qmax));
      out(static_cast<std::size_t>(r), static_cast<std::size_t>(c)) = static_cast<std::int8_t>(q);
    }
  }
  return out;
}

inline QuantTensor quantize(const Matrix& w) { return quantize(w, fit_scale(w)); }

inline Matrix dequantize(const QuantTensor& t) {
  Matrix out(static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
  for (std::size_t r = 0; r < t.rows(); ++r) {
    for (std::size_t c = 0; c < t.cols(); ++c) {
      out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = t(r, c) * t.scale();
    }
  }
  return out;
}

/// Clipped straight-through estimator: the upstream gradient passes where the
/// pre-clip value lies inside the quantization range and is zero elsewhere.
inline Matrix ste_backward(const Matrix& upstream, const Matrix& preclip, int qmin, int qmax,
                           double scale) {
  if (upstream.rows() != preclip.rows() || upstream.cols() != preclip.cols()) {
    throw std::invalid_argument("ste_backward: shape mismatch");
  }
  if (!(scale > 0.0)) {
    throw std::invalid_argument("ste_backward: scale must be positive");
  }
  Matrix out = upstream;
  for (Eigen::Index i = 0; i < out.size(); ++i) {
    const double ratio = preclip.data()[i] / scale;
    if (ratio < qmin || ratio > qmax) out.data()[i] = 0.0;
  }
  return out;
}

inline BitFlipEvent flip_bit(QuantTensor& t, std::size_t row, std::size_t col, int bit,
                             std::size_t layer = 0) {
  if (bit < 0 || bit > 7) {
    throw std::invalid_argument("flip_bit: bit must be in [0,7]");
  }
  std::int8_t& cell = t.at(row, col);
  BitFlipEvent ev{layer, row, col, bit, cell, xor_bit(cell, bit)};
  cell = ev.after;
  return ev;
}

inline WeightBounds compute_bounds(const QuantTensor& t) {
  if (t.empty()) {
    throw std::invalid_argument("compute_bounds: empty tensor");
  }
  const auto [lo, hi] = std::minmax_element(t.values().begin(), t.values().end());
  return {*lo, *hi};
}

struct RepairResult {
  std::int8_t value = 0;
  bool changed = false;
  bool in_range = false;
};

/// Unset bits from the MSB downward until the value re-enters `bounds`.
/// The output bit pattern is always a submask of the input.
inline RepairResult msb_unset_repair(std::int8_t value, WeightBounds bounds) noexcept {
  std::int8_t v = value;
  for (int bit = 7; bit >= 0; --bit) {
    if (bounds.contains(v)) break;
    if (bit_is_set(v, bit)) v = xor_bit(v, bit);
  }
  return {v, v != value, bounds.contains(v)};
}

}  // namespace crossfire
