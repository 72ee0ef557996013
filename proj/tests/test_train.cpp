#include <gtest/gtest.h>

#include "crossfire/train.hpp"

using namespace crossfire;

namespace {

GinModel small_model(std::uint64_t seed) {
  GinSpec spec;
  spec.hidden = 8;
  spec.layers = 2;
  spec.init_gain = 0.5;
  return random_gin(spec, seed);
}

}  // namespace

TEST(TrainSte, ZeroLearningRateKeepsWeights) {
  const auto ds = synth_dataset(1, 40, {TaskKind::kDegreeProfile});
  const auto split = train_test_split(ds.size(), 0.25, 1);
  const GinModel init = small_model(2);
  TrainOptions o;
  o.epochs = 2;
  o.lr = 0.0;
  const auto r = train_ste(init, ds, split.train, o);
  for (std::size_t l = 0; l < init.num_layers(); ++l) EXPECT_EQ(r.model.weight(l), init.weight(l));
  ASSERT_EQ(r.epoch_losses.size(), 3u);
  EXPECT_DOUBLE_EQ(r.epoch_losses[0], r.epoch_losses[2]);
}

TEST(TrainSte, LossDecreasesAndQualityIsHigh) {
  const auto ds = synth_dataset(3, 200, {TaskKind::kDegreeProfile});
  const auto split = train_test_split(ds.size(), 0.25, 3);
  TrainOptions o;
  o.epochs = 15;
  o.lr = 5e-3;
  const auto r = train_ste(small_model(4), ds, split.train, o);
  EXPECT_LT(r.epoch_losses.back(), r.epoch_losses.front());
  EXPECT_GT(model_quality(r.model, ds, split.test), 0.8);
}

TEST(TrainSte, DeterministicForSeed) {
  const auto ds = synth_dataset(5, 60, {TaskKind::kDegreeProfile});
  const auto split = train_test_split(ds.size(), 0.25, 5);
  TrainOptions o;
  o.epochs = 2;
  o.seed = 9;
  EXPECT_EQ(train_ste(small_model(6), ds, split.train, o).model, train_ste(small_model(6), ds, split.train, o).model);
}

TEST(TrainSte, L1PenaltyIncreasesSparsity) {
  const auto ds = synth_dataset(7, 100, {TaskKind::kDegreeProfile});
  const auto split = train_test_split(ds.size(), 0.25, 7);
  TrainOptions o;
  o.epochs = 5;
  o.lr = 5e-3;
  auto zeros = [](const GinModel& m) {
    std::size_t z = 0;
    for (const auto& l : m.layers) z += static_cast<std::size_t>(std::count(l.weight.values().begin(), l.weight.values().end(), 0));
    return z;
  };
  const auto plain = train_ste(small_model(8), ds, split.train, o);
  o.l1 = 0.05;
  const auto sparse = train_ste(small_model(8), ds, split.train, o);
  EXPECT_GT(zeros(sparse.model), zeros(plain.model));
}

TEST(TrainSte, RejectsEmptyInputs) {
  const auto ds = synth_dataset(1, 10);
  std::vector<std::size_t> none;
  EXPECT_THROW(train_ste(small_model(1), ds, none, {}), std::invalid_argument);
  TrainOptions bad;
  bad.batch_size = 0;
  std::vector<std::size_t> some = {0, 1};
  EXPECT_THROW(train_ste(small_model(1), ds, some, bad), std::invalid_argument);
}

TEST(ModelQuality, AucAndApInUnitInterval) {
  const auto ds = synth_dataset(2, 40, {TaskKind::kDegreeProfile});
  std::vector<std::size_t> all(ds.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  const auto m = small_model(3);
  for (auto metric : {QualityMetric::kAuroc, QualityMetric::kAp}) {
    const double q = model_quality(m, ds, all, metric);
    EXPECT_GE(q, 0.0);
    EXPECT_LE(q, 1.0);
  }
}
