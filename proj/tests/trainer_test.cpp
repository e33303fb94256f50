#include <cmath>
#include <set>

#include <gtest/gtest.h>

#include "micro.hpp"
#include "seas/checkpoint.hpp"

namespace seas {
namespace {

class Trainer : public ::testing::Test {
 protected:
  Trainer() : generator(testing::micro_generator_config(2), 1) {
    Rng rng(2);
    data = testing::micro_training_set(2, 3, 3, rng);
  }
  Generator generator;
  TrainingSet data;
};

int count_abnormal(const std::vector<BatchItem<float>>& batch) {
  int n = 0;
  for (const auto& item : batch) n += item.sample.abnormal();
  return n;
}

TEST(TrainConfig, StepsAndValidation) {
  TrainConfig c;
  EXPECT_EQ(c.total_steps(2), 1600);
  c.at_variant = true;
  EXPECT_THROW(c.validate(), ConfigError);
  c.no_st = true;
  EXPECT_NO_THROW(c.validate());
  c = TrainConfig{};
  c.abnormal_count = c.normal_count = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.n_anomaly_tokens = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(mixed_strategy_from_string("sometimes"), ConfigError);
  EXPECT_EQ(mixed_strategy_from_string(to_string(MixedStrategy::NormalAbnormal)), MixedStrategy::NormalAbnormal);
}

TEST_F(Trainer, MixedBatchesPairSamplesWithTheirPrompts) {
  TrainConfig c;
  Rng rng(3);
  for (long step = 0; step < 20; ++step) {
    const auto batch = sample_batch(data, c, generator.bank, rng, step, 20);
    ASSERT_EQ(batch.size(), 4u);
    EXPECT_EQ(count_abnormal(batch), 2);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const auto& item = batch[i];
      EXPECT_EQ(item.sample.abnormal(), i < 2) << "abnormal items lead the batch";
      EXPECT_EQ(item.prompt.anomaly_type, item.sample.anomaly_type);
      if (!item.sample.abnormal()) {
        EXPECT_TRUE(item.prompt.anomaly_columns.empty());
      }
    }
  }
}

TEST_F(Trainer, NoMixedCyclesOneTypePerStep) {
  TrainConfig c;
  c.no_mixed = true;
  Rng rng(4);
  for (long step = 0; step < 10; ++step) {
    std::set<int> types;
    for (const auto& item : sample_batch(data, c, generator.bank, rng, step, 10))
      if (item.sample.abnormal()) types.insert(item.sample.anomaly_type);
    EXPECT_EQ(types, std::set<int>{1 + static_cast<int>(step % 2)});
  }
}

TEST_F(Trainer, OrderedStrategiesSwitchAtTheMidpoint) {
  TrainConfig c;
  Rng rng(5);
  c.mixed_strategy = MixedStrategy::AbnormalNormal;
  EXPECT_EQ(count_abnormal(sample_batch(data, c, generator.bank, rng, 4, 10)), 4);
  EXPECT_EQ(count_abnormal(sample_batch(data, c, generator.bank, rng, 5, 10)), 0);
  c.mixed_strategy = MixedStrategy::NormalAbnormal;
  EXPECT_EQ(count_abnormal(sample_batch(data, c, generator.bank, rng, 4, 10)), 0);
  EXPECT_EQ(count_abnormal(sample_batch(data, c, generator.bank, rng, 5, 10)), 4);
}

TEST_F(Trainer, EmptyPartitionsAreDataErrors) {
  TrainConfig c;
  Rng rng(6);
  TrainingSet no_normal = data;
  no_normal.normal.clear();
  EXPECT_THROW(sample_batch(no_normal, c, generator.bank, rng, 0, 1), DataError);
  TrainingSet no_abnormal = data;
  no_abnormal.abnormal.clear();
  EXPECT_THROW(sample_batch(no_abnormal, c, generator.bank, rng, 0, 1), DataError);
}

TEST_F(Trainer, UpdatesUNetAndAddedRowsOnly) {
  const Tensor<float> base = generator.bank.table().base().value();
  const Tensor<float> added = generator.bank.table().added().value();
  const std::string before = generator_fingerprint(generator);
  TrainConfig c;
  c.steps_per_anomaly_type = 3;
  std::vector<std::string> lines;
  const auto result = train_generator(generator, data, c, [&](const std::string& l) { lines.push_back(l); });
  EXPECT_EQ(result.log.size(), 6u);
  EXPECT_EQ(lines.size(), 6u);
  for (const auto& br : result.log) {
    EXPECT_TRUE(std::isfinite(br.total));
    EXPECT_GT(br.da_term1, 0);
  }
  EXPECT_TRUE((generator.bank.table().base().value().array() == base.array()).all());
  EXPECT_FALSE((generator.bank.table().added().value().array() == added.array()).all());
  EXPECT_NE(generator_fingerprint(generator), before);
  EXPECT_GE(result.alignment_after.iou, 0.0);
  EXPECT_LE(result.alignment_after.iou, 1.0);
}

TEST_F(Trainer, RejectsTypeCountMismatch) {
  TrainingSet three = data;
  three.num_types = 3;
  TrainConfig c;
  c.steps_per_anomaly_type = 1;
  EXPECT_THROW(train_generator(generator, three, c), ConfigError);
}

TEST_F(Trainer, IsDeterministicForAFixedSeed) {
  Generator other(testing::micro_generator_config(2), 1);
  TrainConfig c;
  c.steps_per_anomaly_type = 2;
  c.seed = 9;
  train_generator(generator, data, c, {}, false);
  train_generator(other, data, c, {}, false);
  EXPECT_EQ(generator_fingerprint(generator), generator_fingerprint(other));
}

TEST(GeneratorConfig, FollowsTrainingTokens) {
  TrainConfig c;
  c.n_anomaly_tokens = 8;
  c.n_normal_tokens = 4;
  const auto g = make_generator_config(c, 3);
  EXPECT_EQ(g.prompt.num_types, 3);
  EXPECT_EQ(g.prompt.n_anomaly_tokens, 8);
  EXPECT_EQ(g.prompt.n_normal_tokens, 4);
}

}  // namespace
}  // namespace seas
