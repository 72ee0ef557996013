#include <gtest/gtest.h>

#include <optional>
#include <random>
#include <set>

#include "crossfire/crossfire.hpp"
#include "test_support.hpp"

using namespace crossfire;
using namespace testing_support;

namespace {

Matrix row(std::initializer_list<double> v) {
  Matrix m(1, static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) m(0, i++) = x;
  return m;
}

QuantTensor random_tensor(std::mt19937_64& rng, std::size_t rows, std::size_t cols) {
  QuantTensor t(rows, cols, 0.01);
  for (auto& v : t.values()) v = static_cast<std::int8_t>(static_cast<int>(rng() % 255) - 127);
  return t;
}

GinModel single_layer_model(QuantTensor w) {
  GinModel m;
  m.layers.push_back({std::move(w), Vector::Zero(1), Vector::Ones(1)});
  return m;
}

}  // namespace

TEST(InduceSparsity, Examples) {
  const Matrix w = row({0.1, -0.05, 0.9, -2.0});
  EXPECT_EQ(induce_sparsity(w, 0.0), w);
  EXPECT_EQ(induce_sparsity(w, 0.75), row({0, 0, 0.9, -2.0}));
  EXPECT_EQ(induce_sparsity(Matrix::Zero(2, 2), 0.75), Matrix::Zero(2, 2));
  EXPECT_DOUBLE_EQ(nearest_rank_quantile_abs(w, 0.75), 0.9);
  EXPECT_THROW(induce_sparsity(w, 1.0), std::invalid_argument);
  EXPECT_THROW(induce_sparsity(w, -0.1), std::invalid_argument);
}

TEST(InduceSparsity, ThresholdProperty) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n01;
  for (int trial = 0; trial < 200; ++trial) {
    const int rows = 1 + static_cast<int>(rng() % 6), cols = 1 + static_cast<int>(rng() % 6);
    Matrix w(rows, cols);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = n01(rng);
    const double p = static_cast<double>(rng() % 100) / 100.0;
    const Matrix out = induce_sparsity(w, p);
    // Independent nearest-rank: the ceil(pK)-th smallest magnitude.
    std::vector<double> mags(w.data(), w.data() + w.size());
    for (auto& v : mags) v = std::abs(v);
    std::sort(mags.begin(), mags.end());
    const std::size_t rank = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(p * static_cast<double>(mags.size()) - 1e-9)));
    const double tau = mags[rank - 1];
    std::size_t zeroed = 0;
    for (Eigen::Index i = 0; i < w.size(); ++i) {
      if (std::abs(w.data()[i]) < tau) {
        EXPECT_EQ(out.data()[i], 0.0);
        ++zeroed;
      } else {
        EXPECT_EQ(out.data()[i], w.data()[i]);
      }
    }
    EXPECT_LT(zeroed, rank);
  }
}

TEST(PseudoLabel, ThresholdsLogits) {
  DenseGin d;
  d.eps = {0.0};
  d.layers.push_back(linear(Matrix::Zero(1, 1)));
  d.layers.push_back(linear(Matrix::Zero(1, 1)));
  d.layers.push_back(linear(Matrix::Zero(1, 2), 30.0));
  std::mt19937_64 rng(2);
  std::vector<GraphBatch> s = {random_batch(rng, 3, 2, 1), random_batch(rng, 2, 2, 1)};
  const auto p = pseudo_label(d, s);
  ASSERT_EQ(p.size(), 2u);
  EXPECT_EQ(p[0].targets, Matrix::Ones(3, 1));
  EXPECT_EQ(p[1].targets, Matrix::Ones(2, 1));
  d.layers.back().bias(0) = -30.0;
  EXPECT_EQ(pseudo_label(d, s)[0].targets, Matrix::Zero(3, 1));
  EXPECT_THROW(pseudo_label(d, std::span<const GraphBatch>{}), std::invalid_argument);
}

TEST(AccumulateGradients, SingleBatchEqualsBackwardAndSumsAreAdditive) {
  std::mt19937_64 rng(3);
  GinSpec spec;
  spec.input_dim = 3;
  spec.hidden = 4;
  spec.layers = 2;
  const DenseGin d = random_dense_gin(spec, 3);
  std::vector<GraphBatch> s = {random_batch(rng, 2, 3, 3), random_batch(rng, 2, 3, 3)};
  const auto p = pseudo_label(d, s);
  const auto one = accumulate_gradients(d, std::span(p).first(1));
  const auto br = backward(d, p[0].batch, std::cref(p[0].targets), LossKind::kBce);
  for (std::size_t l = 0; l < one.size(); ++l) EXPECT_EQ(one[l], br.grads.weights[l]);
  const auto both = accumulate_gradients(d, p);
  const auto second = accumulate_gradients(d, std::span(p).subspan(1));
  for (std::size_t l = 0; l < both.size(); ++l) EXPECT_LE((both[l] - one[l] - second[l]).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(SelectHoneypots, Examples) {
  Matrix g(4, 1);
  g << 3.0, -0.5, 2.0, 1.0;
  EXPECT_EQ(select_honeypots(g, 0.5), (std::vector<std::size_t>{0, 2}));
  EXPECT_EQ(select_honeypots(g, 1.0), (std::vector<std::size_t>{0, 1, 2, 3}));
  EXPECT_EQ(select_honeypots(Matrix::Ones(4, 2), 0.5), (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(honeypot_count(16, 0.1), 2u);
  EXPECT_EQ(honeypot_count(1, 0.1), 1u);
  EXPECT_EQ(honeypot_count(4, 0.01), 1u);
  EXPECT_THROW(select_honeypots(g, 0.0), std::invalid_argument);
}

TEST(SelectHoneypots, TopKProperty) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 20);
    Matrix g(n, 3);
    for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = static_cast<double>(static_cast<int>(rng() % 7) - 3);
    const double p = 0.01 + static_cast<double>(rng() % 100) / 100.0;
    const auto idx = select_honeypots(g, std::min(p, 1.0));
    const Vector s = neuron_scores(g);
    ASSERT_EQ(idx.size(), honeypot_count(static_cast<std::size_t>(n), std::min(p, 1.0)));
    EXPECT_TRUE(std::is_sorted(idx.begin(), idx.end()));
    std::set<std::size_t> chosen(idx.begin(), idx.end());
    for (int i = 0; i < n; ++i) {
      if (chosen.count(static_cast<std::size_t>(i))) continue;
      for (auto c : idx) {
        EXPECT_TRUE(s(static_cast<Eigen::Index>(c)) > s(i) || (s(static_cast<Eigen::Index>(c)) == s(i) && c < static_cast<std::size_t>(i)));
      }
    }
  }
}

TEST(LayerGamma, Examples) {
  EXPECT_DOUBLE_EQ(layer_gamma(2.0, 1.0, 3), 2.0);
  EXPECT_NEAR(layer_gamma(1.33, 1.1, 2), 1.6093, 1e-12);
  EXPECT_DOUBLE_EQ(layer_gamma(1.66, 1.1, 0), 1.66);
  EXPECT_THROW(layer_gamma(0.5, 1.1, 0), std::invalid_argument);
  EXPECT_THROW(layer_gamma(2.0, 0.9, 0), std::invalid_argument);
}

TEST(Saliency, AffineMapAndDegenerateCase) {
  Vector s(3);
  s << 0, 1, 2;
  const Vector out = saliency_from_scores(s, 2.0);
  EXPECT_DOUBLE_EQ(out(0), 1.0);
  EXPECT_DOUBLE_EQ(out(1), 1.5);
  EXPECT_DOUBLE_EQ(out(2), 2.0);
  EXPECT_EQ(saliency_from_scores(Vector::Constant(1, 7.0), 1.8), Vector::Constant(1, 1.8));
  EXPECT_EQ(saliency_from_scores(Vector::Constant(3, 0.0), 1.8), Vector::Constant(3, 1.8));
  EXPECT_THROW(saliency_from_scores(Vector(0), 2.0), std::invalid_argument);
}

TEST(Saliency, RangeProperty) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    Vector s(1 + static_cast<Eigen::Index>(rng() % 10));
    for (Eigen::Index i = 0; i < s.size(); ++i) s(i) = static_cast<double>(rng() % 1000) / 10.0;
    const double g = 1.0 + static_cast<double>(rng() % 100) / 50.0;
    const Vector out = saliency_from_scores(s, g);
    EXPECT_GE(out.minCoeff(), 1.0 - 1e-12);
    EXPECT_LE(out.maxCoeff(), g + 1e-12);
    for (Eigen::Index i = 0; i < s.size(); ++i)
      for (Eigen::Index j = 0; j < s.size(); ++j) {
        if (s(i) < s(j)) {
          EXPECT_LE(out(i), out(j));
        }
      }
  }
}

TEST(EncodeHoneypots, UnitSaliencyIsNoOp) {
  GinSpec spec;
  spec.input_dim = 3;
  spec.hidden = 4;
  spec.layers = 2;
  DenseGin d = random_dense_gin(spec, 6);
  const DenseGin before = d;
  std::vector<HoneypotLayer> hp(d.layers.size());
  hp[0].indices = {1, 3};
  hp[0].saliency = Vector::Ones(2);
  encode_honeypots(d, hp);
  for (std::size_t l = 0; l < d.layers.size(); ++l) {
    EXPECT_EQ(d.layers[l].weight, before.layers[l].weight);
    EXPECT_EQ(d.layers[l].input_scale, before.layers[l].input_scale);
  }
  hp[0].indices = {9};
  hp[0].saliency = Vector::Ones(1);
  EXPECT_THROW(encode_honeypots(d, hp), std::invalid_argument);
}

TEST(EncodeHoneypots, PreservesRealValuedOutputsProperty) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    GinSpec spec;
    spec.input_dim = 3;
    spec.hidden = 5;
    spec.layers = 3;
    DenseGin d = random_dense_gin(spec, rng());
    const auto b = random_batch(rng, 3, 4, 3);
    const Matrix before = forward(d, b);
    std::vector<HoneypotLayer> hp(d.layers.size());
    for (std::size_t l = 0; l < d.layers.size(); ++l) {
      const auto n = static_cast<std::size_t>(d.layers[l].weight.rows());
      for (std::size_t i = 0; i < n; ++i)
        if (rng() % 2) hp[l].indices.push_back(i);
      hp[l].saliency = Vector(static_cast<Eigen::Index>(hp[l].indices.size()));
      for (Eigen::Index i = 0; i < hp[l].saliency.size(); ++i) hp[l].saliency(i) = 1.0 + static_cast<double>(rng() % 100) / 100.0;
    }
    encode_honeypots(d, hp);
    EXPECT_LE((forward(d, b) - before).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(Ledger, DynamicDigestSizing) {
  EXPECT_EQ(dynamic_cross_digest(256, 256, 8), 2u);
  EXPECT_EQ(dynamic_cross_digest(16, 16, 8), 1u);
  EXPECT_EQ(dynamic_cross_digest(1, 1, 8), 1u);
  EXPECT_EQ(dynamic_cross_digest(1u << 16, 1u << 16, 3), 3u);
  EXPECT_EQ(dynamic_cross_digest(4096, 4096, 8), 3u);
}

TEST(Ledger, RowAndColumnDigestsUseLe64Sums) {
  QuantTensor w(2, 2, 1.0);
  w(0, 0) = 1;
  w(0, 1) = 2;
  w(1, 0) = -3;
  w(1, 1) = 0;
  const auto ll = build_layer_ledger(w, 2);
  EXPECT_EQ(row_sums(w), (std::vector<std::int64_t>{3, -3}));
  EXPECT_EQ(col_sums(w), (std::vector<std::int64_t>{-2, 2}));
  // Blake2b-2(le64(-3)) = 9823
  EXPECT_EQ(ll.row_digests[2], 0x98);
  EXPECT_EQ(ll.row_digests[3], 0x23);
  EXPECT_EQ(ll.bounds, (WeightBounds{-3, 2}));
  EXPECT_EQ(ll.row_digests.size(), 4u);
  EXPECT_EQ(ll.col_digests.size(), 4u);
}

TEST(Monitor, DetectsFlipAndRevert) {
  std::mt19937_64 rng(8);
  GinModel m = single_layer_model(random_tensor(rng, 16, 16));
  const auto ledger = build_ledger(m, 2);
  EXPECT_FALSE(monitor(m, ledger));
  EXPECT_TRUE(verify(m, ledger));
  flip_bit(m.weight(0), 3, 5, 2);
  EXPECT_TRUE(monitor(m, ledger));
  EXPECT_FALSE(verify(m, ledger));
  flip_bit(m.weight(0), 3, 5, 2);
  EXPECT_FALSE(monitor(m, ledger));
}

TEST(Localize, SingleFlip) {
  std::mt19937_64 rng(9);
  GinModel m = single_layer_model(random_tensor(rng, 8, 8));
  const auto ledger = build_ledger(m, 2);
  EXPECT_TRUE(localize(m, ledger).empty());
  flip_bit(m.weight(0), 3, 5, 4);
  const auto s = localize(m, ledger);
  ASSERT_EQ(s.layers.size(), 1u);
  EXPECT_EQ(s.layers[0].rows, (std::vector<std::size_t>{3}));
  EXPECT_EQ(s.layers[0].cols, (std::vector<std::size_t>{5}));
  EXPECT_EQ(s.candidate_count(), 1u);
  EXPECT_TRUE(s.contains(0, 3, 5));
}

TEST(Localize, TwoFlipsYieldCartesianProduct) {
  std::mt19937_64 rng(10);
  GinModel m = single_layer_model(random_tensor(rng, 8, 8));
  const auto ledger = build_ledger(m, 2);
  flip_bit(m.weight(0), 1, 1, 6);
  flip_bit(m.weight(0), 2, 2, 3);
  const auto s = localize(m, ledger);
  EXPECT_EQ(s.candidate_count(), 4u);
  for (auto [r, c] : std::vector<std::pair<int, int>>{{1, 1}, {2, 2}, {1, 2}, {2, 1}}) EXPECT_TRUE(s.contains(0, r, c));
}

TEST(Reconstruct, UntouchedModelIsVerified) {
  auto p = make_protected(11);
  const auto r = reconstruct(p.model, p.vault);
  EXPECT_FALSE(r.attack_detected);
  EXPECT_TRUE(r.verified);
  EXPECT_TRUE(r.actions.empty());
}

TEST(Reconstruct, HoneypotOnlyFlipsRestoredByFirstStage) {
  auto p = make_protected(12);
  const GinModel pristine = p.model;
  const auto& reg = p.vault.registry();
  std::mt19937_64 rng(12);
  std::vector<CellRef> cells;
  for (std::size_t l = 0; l < reg.layers.size(); ++l)
    for (const auto& e : reg.layers[l].sealed) cells.push_back({l, e.row, e.col});
  std::shuffle(cells.begin(), cells.end(), rng);
  for (int i = 0; i < 5; ++i) flip_bit(p.model.weight(cells[i].layer), cells[i].row, cells[i].col, static_cast<int>(rng() % 8));
  const auto r = reconstruct(p.model, p.vault);
  EXPECT_TRUE(r.attack_detected);
  EXPECT_TRUE(r.verified);
  EXPECT_EQ(p.model, pristine);
  EXPECT_EQ(r.count(RepairAction::kHoneypotRestore), 5u);
  EXPECT_EQ(r.count(RepairAction::kOodRepair), 0u);
  EXPECT_EQ(r.count(RepairAction::kZeroed), 0u);
}

TEST(Reconstruct, OutOfRangeMsbFlipRepaired) {
  auto p = make_protected(13);
  const GinModel pristine = p.model;
  const auto& ledger = p.vault.ledger();
  bool done = false;
  for (std::size_t l = 0; l < p.model.num_layers() && !done; ++l) {
    const auto& w = p.model.weight(l);
    for (std::size_t r = 0; r < w.rows() && !done; ++r) {
      for (std::size_t c = 0; c < w.cols() && !done; ++c) {
        const int v = w(r, c);
        if (v < 0 || p.vault.registry().owns(l, r, c) || v - 128 >= ledger.layers[l].bounds.lower) continue;
        flip_bit(p.model.weight(l), r, c, 7);
        done = true;
      }
    }
  }
  ASSERT_TRUE(done);
  const auto rep = reconstruct(p.model, p.vault);
  EXPECT_TRUE(rep.verified);
  EXPECT_EQ(rep.count(RepairAction::kOodRepair), 1u);
  EXPECT_EQ(p.model, pristine);
}

TEST(Reconstruct, PrunedZeroFlipsZeroed) {
  auto p = make_protected(14);
  const GinModel pristine = p.model;
  const std::size_t l = 1;
  const auto& w = p.model.weight(l);
  ASSERT_GE(p.vault.ledger().layers[l].bounds.upper, 1);
  std::size_t flipped = 0;
  for (std::size_t r = 0; r < w.rows() && flipped == 0; ++r) {
    std::vector<std::size_t> zero_cols;
    for (std::size_t c = 0; c < w.cols(); ++c)
      if (w(r, c) == 0 && !p.vault.registry().owns(l, r, c)) zero_cols.push_back(c);
    if (zero_cols.size() < 2) continue;
    // Same row: the suspect set is exactly the flipped cells.
    flip_bit(p.model.weight(l), r, zero_cols[0], 0);
    flip_bit(p.model.weight(l), r, zero_cols[1], 0);
    flipped = 2;
  }
  ASSERT_EQ(flipped, 2u);
  const auto rep = reconstruct(p.model, p.vault);
  EXPECT_TRUE(rep.verified);
  EXPECT_EQ(rep.count(RepairAction::kZeroed), 2u);
  EXPECT_EQ(p.model, pristine);
}

TEST(Reconstruct, HoneypotFlipsWithCancellingColumnSumRestored) {
  CrossfireConfig cfg;
  cfg.p_honeypot = 0.25;
  auto p = make_protected(18, 8, 2, cfg);
  const GinModel pristine = p.model;
  // Two honeypot cells in one column flipped by +2^b and -2^b.
  std::optional<std::size_t> layer;
  for (std::size_t l = 0; l < p.model.num_layers() && !layer; ++l) {
    const auto& hp = p.vault.registry().layers[l].indices;
    auto& w = p.model.weight(l);
    for (std::size_t i = 0; i < hp.size() && !layer; ++i)
      for (std::size_t j = 0; j < hp.size() && !layer; ++j)
        for (std::size_t c = 0; c < w.cols() && !layer; ++c)
          for (int bit = 0; bit < 7 && !layer; ++bit) {
            if (i == j) continue;
            const auto a = static_cast<std::uint8_t>(w(hp[i], c));
            const auto b = static_cast<std::uint8_t>(w(hp[j], c));
            if ((a >> bit & 1) == 0 && (b >> bit & 1) == 1) {
              flip_bit(w, hp[i], c, bit);
              flip_bit(w, hp[j], c, bit);
              layer = l;
            }
          }
  }
  ASSERT_TRUE(layer.has_value());
  const auto s = localize(p.model, p.vault.ledger());
  ASSERT_EQ(s.layers.size(), 1u);
  EXPECT_TRUE(s.layers[0].cols.empty());
  EXPECT_EQ(s.layers[0].rows.size(), 2u);
  const auto rep = reconstruct(p.model, p.vault);
  EXPECT_TRUE(rep.verified);
  EXPECT_EQ(rep.count(RepairAction::kHoneypotRestore), 2u);
  EXPECT_EQ(p.model, pristine);
}

TEST(Reconstruct, OverloadWithExplicitLedgerAndRegistry) {
  auto p = make_protected(15);
  const GinModel pristine = p.model;
  const auto& s = p.vault.registry().layers[0].sealed.front();
  flip_bit(p.model.weight(0), s.row, s.col, 7);
  EXPECT_TRUE(reconstruct(p.model, p.vault.ledger(), p.vault.registry()).verified);
  EXPECT_EQ(p.model, pristine);
}

TEST(Protect, RegistryInvariants) {
  CrossfireConfig cfg;
  cfg.p_honeypot = 0.25;
  cfg.gamma = 1.66;
  const auto p = make_protected(16, 8, 3, cfg);
  const auto& reg = p.vault.registry();
  const DenseGin shape = p.model.dense();
  ASSERT_EQ(reg.layers.size(), p.model.num_layers());
  for (std::size_t l = 0; l < reg.layers.size(); ++l) {
    const auto& hl = reg.layers[l];
    const auto n = p.model.weight(l).rows();
    EXPECT_EQ(hl.indices.size(), honeypot_count(n, 0.25));
    EXPECT_NEAR(hl.gamma_l, 1.66 * std::pow(1.1, static_cast<double>(l / 2)), 1e-12);
    EXPECT_GE(hl.saliency.minCoeff(), 1.0 - 1e-12);
    EXPECT_LE(hl.saliency.maxCoeff(), hl.gamma_l + 1e-12);
    for (auto h : hl.indices)
      for (std::size_t c = 0; c < p.model.weight(l).cols(); ++c) EXPECT_TRUE(reg.owns(l, h, c));
    if (const auto car = carrier_of(shape, l)) {
      for (auto h : hl.indices)
        for (std::size_t r = 0; r < p.model.weight(car->layer).rows(); ++r)
          EXPECT_TRUE(reg.owns(car->layer, r, static_cast<std::size_t>(car->column_offset) + h));
    }
    for (const auto& e : hl.sealed) EXPECT_EQ(p.model.weight(l)(e.row, e.col), e.value);
  }
  EXPECT_TRUE(verify(p.model, p.vault.ledger()));
  for (std::size_t l = 0; l < p.model.num_layers(); ++l) EXPECT_EQ(p.vault.ledger().layers[l].bounds, compute_bounds(p.model.weight(l)));
}

TEST(Protect, DynamicDigestPerLayer) {
  CrossfireConfig cfg;
  cfg.dynamic_digest = true;
  const auto p = make_protected(17, 16, 2, cfg);
  for (std::size_t l = 0; l < p.model.num_layers(); ++l) {
    const auto& w = p.model.weight(l);
    EXPECT_EQ(p.vault.ledger().layers[l].digest_size, dynamic_cross_digest(w.rows(), w.cols(), 8));
  }
}

TEST(Overhead, StorageFormula) {
  EXPECT_EQ(hash_storage_bytes(128, 128, 2), 516u);
  HashLedger ledger;
  ledger.layers.push_back(build_layer_ledger(QuantTensor(128, 128, 1.0), 2));
  const auto o = overhead(ledger);
  EXPECT_EQ(o.hash_bytes, 516u);
  EXPECT_EQ(o.weight_bytes, 16384u);
  EXPECT_NEAR(o.hash_ratio(), 516.0 / 16384.0, 1e-15);
  EXPECT_EQ(o.storage_bytes(), 518u);
  const auto p = make_protected(18);
  const auto full = overhead(p.vault.ledger(), &p.vault.registry());
  std::size_t expect = 0;
  for (const auto& l : p.vault.registry().layers) expect += 12 * l.indices.size() + l.sealed.size();
  EXPECT_EQ(full.registry_bytes, expect);
}
