#include <gtest/gtest.h>

#include <random>

#include "crossfire/quant.hpp"

using namespace crossfire;

namespace {

Matrix mat(std::initializer_list<std::initializer_list<double>> rows) {
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.begin()->size()));
  Eigen::Index r = 0;
  for (const auto& row : rows) {
    Eigen::Index c = 0;
    for (double v : row) m(r, c++) = v;
    ++r;
  }
  return m;
}

QuantTensor tensor(std::initializer_list<int> values, std::size_t rows, std::size_t cols, double scale = 1.0) {
  QuantTensor t(rows, cols, scale, -128, 127);
  std::size_t i = 0;
  for (int v : values) t.values()[i++] = static_cast<std::int8_t>(v);
  return t;
}

}  // namespace

TEST(Quantize, ZeroMapsToZero) {
  const auto t = quantize(mat({{0.0}}), 0.5, -128, 127);
  EXPECT_EQ(t(0, 0), 0);
}

TEST(Quantize, RoundsHalfAwayFromZeroAndNearest) {
  const auto t = quantize(mat({{1.0, -0.26}}), 0.5, -128, 127);
  EXPECT_EQ(t(0, 0), 2);
  EXPECT_EQ(t(0, 1), -1);
  const auto ties = quantize(mat({{0.25, -0.25, 0.75}}), 0.5, -128, 127);
  EXPECT_EQ(ties(0, 0), 1);
  EXPECT_EQ(ties(0, 1), -1);
  EXPECT_EQ(ties(0, 2), 2);
}

TEST(Quantize, ClipsToBounds) {
  EXPECT_EQ(quantize(mat({{100.0}}), 0.5, -128, 127)(0, 0), 127);
  EXPECT_EQ(quantize(mat({{-100.0}}), 0.5, -127, 127)(0, 0), -127);
}

TEST(Quantize, RejectsBadScaleAndNonFinite) {
  EXPECT_THROW(quantize(mat({{1.0}}), 0.0, -128, 127), std::invalid_argument);
  EXPECT_THROW(quantize(mat({{1.0}}), -1.0, -128, 127), std::invalid_argument);
  EXPECT_THROW(quantize(mat({{std::nan("")}}), 1.0, -128, 127), std::invalid_argument);
  EXPECT_THROW(quantize(mat({{INFINITY}}), 1.0, -128, 127), std::invalid_argument);
  EXPECT_THROW(QuantTensor(1, 1, 1.0, 5, 4), std::invalid_argument);
}

TEST(Quantize, FitScaleIsMaxAbsOver127) {
  EXPECT_DOUBLE_EQ(fit_scale(mat({{0.5, -2.54}})), 2.54 / 127.0);
  EXPECT_DOUBLE_EQ(fit_scale(mat({{0.0, 0.0}})), 1.0);
  const auto t = quantize(mat({{0.5, -2.54}}));
  EXPECT_EQ(t(0, 1), -127);
}

TEST(Dequantize, ElementwiseProduct) {
  EXPECT_EQ(dequantize(tensor({0}, 1, 1, 0.5))(0, 0), 0.0);
  const Matrix d = dequantize(tensor({2, -1}, 1, 2, 0.5));
  EXPECT_DOUBLE_EQ(d(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(d(0, 1), -0.5);
}

TEST(Dequantize, RoundTripWithinHalfScaleProperty) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const double s = std::uniform_real_distribution<double>(1e-3, 2.0)(rng);
    const int rows = std::uniform_int_distribution<int>(1, 6)(rng);
    const int cols = std::uniform_int_distribution<int>(1, 6)(rng);
    std::uniform_real_distribution<double> u(-127 * s, 127 * s);
    Matrix w(rows, cols);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = u(rng);
    const Matrix back = dequantize(quantize(w, s, -128, 127));
    EXPECT_LE((back - w).cwiseAbs().maxCoeff(), s / 2 + 1e-12);
  }
}

TEST(SteBackward, PassesInRangeAndMasksClipped) {
  const Matrix up = mat({{1.0, 2.0, 3.0}});
  EXPECT_EQ(ste_backward(up, mat({{0.1, -0.2, 0.3}}), -127, 127, 1.0), up);
  const Matrix g = ste_backward(up, mat({{0.1, 500.0, -500.0}}), -127, 127, 1.0);
  EXPECT_EQ(g(0, 0), 1.0);
  EXPECT_EQ(g(0, 1), 0.0);
  EXPECT_EQ(g(0, 2), 0.0);
  EXPECT_EQ(ste_backward(Matrix::Zero(1, 3), mat({{0.1, 500.0, 1.0}}), -127, 127, 1.0), Matrix::Zero(1, 3));
  EXPECT_THROW(ste_backward(up, mat({{0.1}}), -127, 127, 1.0), std::invalid_argument);
}

TEST(FlipBit, TwosComplementExamples) {
  auto t = tensor({0, 6}, 1, 2);
  const auto e0 = flip_bit(t, 0, 0, 0);
  EXPECT_EQ(e0.before, 0);
  EXPECT_EQ(e0.after, 1);
  const auto e7 = flip_bit(t, 0, 1, 7, 3);
  EXPECT_EQ(e7.before, 6);
  EXPECT_EQ(e7.after, -122);
  EXPECT_EQ(e7.layer, 3u);
  EXPECT_EQ(t(0, 1), -122);
}

TEST(FlipBit, RejectsOutOfRange) {
  auto t = tensor({0, 0}, 1, 2);
  EXPECT_THROW(flip_bit(t, 1, 0, 0), std::invalid_argument);
  EXPECT_THROW(flip_bit(t, 0, 2, 0), std::invalid_argument);
  EXPECT_THROW(flip_bit(t, 0, 0, 8), std::invalid_argument);
  EXPECT_THROW(flip_bit(t, 0, 0, -1), std::invalid_argument);
}

TEST(FlipBit, InvolutionAndEventInvariantProperty) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 500; ++trial) {
    auto t = tensor({0, 0, 0, 0, 0, 0}, 2, 3);
    for (auto& v : t.values()) v = static_cast<std::int8_t>(rng());
    const auto before = t;
    const std::size_t r = rng() % 2, c = rng() % 3;
    const int bit = static_cast<int>(rng() % 8);
    const auto ev = flip_bit(t, r, c, bit);
    EXPECT_EQ(static_cast<std::uint8_t>(ev.after), static_cast<std::uint8_t>(ev.before) ^ (1u << bit));
    flip_bit(t, r, c, bit);
    EXPECT_EQ(t, before);
  }
}

TEST(ComputeBounds, MinMax) {
  const auto b = compute_bounds(tensor({-50, 60}, 1, 2));
  EXPECT_EQ(b.lower, -50);
  EXPECT_EQ(b.upper, 60);
  const auto z = compute_bounds(tensor({0}, 1, 1));
  EXPECT_EQ(z.lower, 0);
  EXPECT_EQ(z.upper, 0);
  const auto c = compute_bounds(tensor({5, -3, 7}, 1, 3));
  EXPECT_EQ(c.lower, -3);
  EXPECT_EQ(c.upper, 7);
  EXPECT_THROW(compute_bounds(QuantTensor(0, 0, 1.0)), std::invalid_argument);
}

TEST(ComputeBounds, BracketsEveryElementProperty) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    QuantTensor t(1 + rng() % 8, 1 + rng() % 8, 1.0, -128, 127);
    for (auto& v : t.values()) v = static_cast<std::int8_t>(rng());
    const auto b = compute_bounds(t);
    for (auto v : t.values()) EXPECT_TRUE(b.contains(v));
  }
}

TEST(MsbUnsetRepair, WorkedExample) {
  const auto r = msb_unset_repair(-58, {-50, 60});
  EXPECT_EQ(r.value, 6);
  EXPECT_TRUE(r.changed);
  EXPECT_TRUE(r.in_range);
}

TEST(MsbUnsetRepair, InRangeValueUntouched) {
  const auto r = msb_unset_repair(14, {-50, 60});
  EXPECT_EQ(r.value, 14);
  EXPECT_FALSE(r.changed);
  EXPECT_TRUE(r.in_range);
}

TEST(MsbUnsetRepair, StopsAtFirstInRangeValue) {
  // 40 = 00101000: unsetting bit 5 gives 8, which already lies in [1,10].
  const auto r = msb_unset_repair(40, {1, 10});
  EXPECT_EQ(r.value, 8);
  EXPECT_TRUE(r.changed);
  EXPECT_TRUE(r.in_range);
}

TEST(MsbUnsetRepair, ReportsFailureWhenNothingLandsInRange) {
  // 48 = 00110000: 48 -> 16 -> 0, and 0 is below the lower bound.
  const auto r = msb_unset_repair(48, {1, 10});
  EXPECT_EQ(r.value, 0);
  EXPECT_TRUE(r.changed);
  EXPECT_FALSE(r.in_range);
}

TEST(MsbUnsetRepair, SubmaskAndIdentityProperty) {
  for (int lo = -128; lo <= 127; lo += 7) {
    for (int hi = lo; hi <= 127; hi += 11) {
      for (int v = -128; v <= 127; ++v) {
        const WeightBounds b{static_cast<std::int8_t>(lo), static_cast<std::int8_t>(hi)};
        const auto r = msb_unset_repair(static_cast<std::int8_t>(v), b);
        const auto in = static_cast<std::uint8_t>(v);
        const auto out = static_cast<std::uint8_t>(r.value);
        ASSERT_EQ(out & ~in, 0) << v;
        ASSERT_EQ(r.in_range, b.contains(r.value));
        if (b.contains(static_cast<std::int8_t>(v))) {
          ASSERT_EQ(r.value, v);
          ASSERT_FALSE(r.changed);
        }
      }
    }
  }
}
