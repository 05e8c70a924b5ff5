// Copyright 2026 The TR-PTS Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "test_support.hpp"
#include "trpts/error.hpp"
#include "trpts/rng.hpp"
#include "trpts/trainer.hpp"

namespace trpts {
namespace {

using testing::random_dataset;
using testing::tiny_config;

std::vector<std::vector<float>> snapshot(const ViTModel<float>& m) {
  std::vector<std::vector<float>> out;
  for (const auto& p : m.parameters()) out.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
  return out;
}

TEST(Schedule, CosineEndpointsAndWarmup) {
  TrainConfig c;
  c.learning_rate = 1e-2;
  c.final_learning_rate = 1e-4;
  EXPECT_NEAR(cosine_learning_rate(c, 0, 100), 1e-2, 1e-9);
  EXPECT_NEAR(cosine_learning_rate(c, 99, 100), 1e-4, 1e-9);
  double previous = 1.0;
  for (int s = 0; s < 100; ++s) {
    const double lr = cosine_learning_rate(c, s, 100);
    EXPECT_LE(lr, previous);
    previous = lr;
  }
  c.warmup_steps = 10;
  EXPECT_NEAR(cosine_learning_rate(c, 0, 100), 1e-3, 1e-12);
  EXPECT_NEAR(cosine_learning_rate(c, 9, 100), 1e-2, 1e-12);
  EXPECT_NEAR(cosine_learning_rate(c, 10, 100), 1e-2, 1e-9);
  EXPECT_NEAR(cosine_learning_rate(c, 99, 100), 1e-4, 1e-9);
}

TEST(Config, Validation) {
  TrainConfig c;
  c.learning_rate = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.epochs = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_EQ(parse_optimizer("sgd"), OptimizerKind::kSgd);
  EXPECT_THROW(parse_optimizer("lbfgs"), ConfigError);
}

TEST(Update, SingleParameterSgdArithmetic) {
  ParameterRegistry<double> params;
  params.add(-1, "w", Tensor<double>::from({1}, {1.5}));
  auto mask = full_mask(params.layout());
  auto state = TrainState<double>::start(params, mask);
  params[0].tensor.mutable_grad()[0] = 2.0;
  TrainConfig c;
  c.optimizer = OptimizerKind::kSgd;
  apply_masked_update(params, state, c, 0.1);
  EXPECT_DOUBLE_EQ(params[0].tensor.at(0), 1.5 - 0.2);
  EXPECT_EQ(state.step, 1);
}

TEST(Update, FullMaskSgdEqualsPlainSgdAndZeroMaskFreezes) {
  std::mt19937_64 rng(3);
  auto w = testing::random_values(rng, 6);
  auto g = testing::random_values(rng, 6);
  for (bool full : {true, false}) {
    ParameterRegistry<double> params;
    params.add(0, "w", Tensor<double>::from({2, 3}, w));
    auto state = TrainState<double>::start(params, full ? full_mask(params.layout())
                                                        : SelectionMask::zeros(params.layout()));
    EXPECT_EQ(params[0].tensor.requires_grad(), full);
    std::copy(g.begin(), g.end(), params[0].tensor.mutable_grad().begin());
    TrainConfig c;
    c.optimizer = OptimizerKind::kSgd;
    apply_masked_update(params, state, c, 0.05);
    for (int j = 0; j < 6; ++j) EXPECT_EQ(params[0].tensor.at(j), full ? w[j] - 0.05 * g[j] : w[j]);
  }
}

TEST(Update, AdamFirstStepMovesByLearningRate) {
  ParameterRegistry<double> params;
  params.add(-1, "w", Tensor<double>::from({3}, {1.0, 1.0, 1.0}));
  auto mask = full_mask(params.layout());
  mask.bits[0][1] = 0;
  auto state = TrainState<double>::start(params, mask);
  auto grad = params[0].tensor.mutable_grad();
  grad[0] = 4.0;
  grad[1] = 4.0;
  grad[2] = -0.5;
  apply_masked_update(params, state, TrainConfig{}, 0.01);
  // bias-corrected first step is g/|g| up to epsilon
  EXPECT_NEAR(params[0].tensor.at(0), 0.99, 1e-8);
  EXPECT_EQ(params[0].tensor.at(1), 1.0);
  EXPECT_NEAR(params[0].tensor.at(2), 1.01, 1e-8);
}

class TrainingFixture : public ::testing::Test {
 protected:
  ModelConfig config = tiny_config(2, 8, 2, 8, 4, 3, 2);
  Dataset train, val;
  void SetUp() override {
    std::mt19937_64 rng(44);
    train = random_dataset(rng, 48, config);
    val = random_dataset(rng, 24, config);
  }
};

TEST_F(TrainingFixture, MaskedAdamLeavesFrozenEntriesBitIdentical) {
  ViTModel<float> model(config);
  const auto before = snapshot(model);
  std::mt19937_64 rng(1);
  auto mask = SelectionMask::zeros(model.parameters().layout());
  for (auto& bits : mask.bits) {
    for (auto& b : bits) b = uniform01(rng) < 0.3 ? 1 : 0;
  }
  auto state = TrainState<float>::start(model.parameters(), mask);
  TrainConfig c;
  c.learning_rate = 1e-2;
  c.weight_decay = 0.01;
  auto batches = shuffled_batches(train.size(), 8, rng);
  for (int step = 0; step < 200; ++step) {
    masked_step(model, state, make_batch(train, batches[step % batches.size()]), nullptr, c, 200);
  }
  const auto after = snapshot(model);
  std::int64_t changed = 0;
  for (std::size_t i = 0; i < before.size(); ++i) {
    for (std::size_t j = 0; j < before[i].size(); ++j) {
      if (!mask.bits[i][j]) {
        EXPECT_EQ(std::memcmp(&before[i][j], &after[i][j], sizeof(float)), 0);
      } else {
        changed += before[i][j] != after[i][j];
      }
    }
  }
  EXPECT_GT(changed, 0);
}

TEST_F(TrainingFixture, ZeroMaskComputesLossButChangesNothing) {
  ViTModel<float> model(config);
  const auto before = snapshot(model);
  auto state = TrainState<float>::start(model.parameters(), SelectionMask::zeros(model.parameters().layout()));
  std::vector<std::int64_t> idx = {0, 1, 2, 3};
  const auto r = masked_step(model, state, make_batch(train, idx), nullptr, TrainConfig{}, 1);
  EXPECT_TRUE(std::isfinite(r.loss));
  EXPECT_GT(r.loss, 0.0);
  EXPECT_EQ(snapshot(model), before);
}

TEST_F(TrainingFixture, HeadOnlyMaskIsLinearProbe) {
  ViTModel<float> model(config);
  const auto before = snapshot(model);
  TrainConfig c;
  c.epochs = 2;
  c.batch_size = 16;
  fine_tune(model, pattern_mask(model.parameters().layout(), {"head.*"}), nullptr, train, val, c);
  const auto after = snapshot(model);
  for (std::size_t i = 0; i < before.size(); ++i) {
    const bool head = model.parameters()[i].info.name.rfind("head.", 0) == 0;
    EXPECT_EQ(before[i] != after[i], head) << model.parameters()[i].info.name;
  }
}

TEST_F(TrainingFixture, FineTuneIsDeterministic) {
  TrainConfig c;
  c.epochs = 3;
  c.batch_size = 16;
  c.seed = 9;
  RefinePlan plan{{1}, 0.5, PlacementMode::kExplicit};
  auto run = [&] {
    ViTModel<float> model(config);
    return fine_tune(model, full_mask(model.parameters().layout()), &plan, train, val, c).history;
  };
  const auto a = run(), b = run();
  ASSERT_EQ(a.size(), 3u);
  for (std::size_t e = 0; e < a.size(); ++e) {
    EXPECT_EQ(a[e].epoch, static_cast<int>(e + 1));
    EXPECT_EQ(a[e].train_loss, b[e].train_loss);
    EXPECT_EQ(a[e].val_accuracy, b[e].val_accuracy);
    EXPECT_EQ(a[e].learning_rate, b[e].learning_rate);
  }
  EXPECT_NEAR(a.back().learning_rate, c.final_learning_rate, 1e-9);
}

TEST_F(TrainingFixture, SkippingEpochEvaluationLeavesTrainingUnchanged) {
  TrainConfig c;
  c.epochs = 2;
  c.batch_size = 16;
  c.seed = 4;
  auto run = [&](bool every_epoch) {
    c.evaluate_every_epoch = every_epoch;
    ViTModel<float> model(config);
    auto history = fine_tune(model, full_mask(model.parameters().layout()), nullptr, train, val, c).history;
    return std::make_pair(history, snapshot(model));
  };
  const auto [with, with_params] = run(true);
  const auto [without, without_params] = run(false);
  ASSERT_EQ(with.size(), without.size());
  for (std::size_t e = 0; e < with.size(); ++e) {
    EXPECT_EQ(with[e].train_loss, without[e].train_loss);
    EXPECT_FALSE(std::isnan(with[e].val_accuracy));
    EXPECT_TRUE(std::isnan(without[e].val_accuracy));
  }
  EXPECT_EQ(with_params, without_params);
}

TEST_F(TrainingFixture, NonFiniteLossIsNumericError) {
  ViTModel<float> model(config);
  model.parameters().find("head.bias")->tensor.mutable_data()[0] = std::numeric_limits<float>::infinity();
  TrainConfig c;
  c.epochs = 1;
  EXPECT_THROW(fine_tune(model, full_mask(model.parameters().layout()), nullptr, train, val, c), NumericError);
}

TEST_F(TrainingFixture, ConstantPredictorScoresItsClassShare) {
  ViTModel<float> model(config);
  auto w = model.parameters().find("head.weight")->tensor.mutable_data();
  std::fill(w.begin(), w.end(), 0.0f);
  model.parameters().find("head.bias")->tensor.mutable_data()[2] = 1.0f;
  double share = 0;
  for (auto y : val.labels) share += y == 2;
  share /= static_cast<double>(val.size());
  EXPECT_DOUBLE_EQ(evaluate(model, nullptr, val), share);
  EXPECT_DOUBLE_EQ(evaluate(model, nullptr, val, 5), share);
}

TEST_F(TrainingFixture, CheckpointRoundTripsBitExactly) {
  ViTModel<float> model(config);
  TrainConfig c;
  c.epochs = 1;
  fine_tune(model, full_mask(model.parameters().layout()), nullptr, train, val, c);
  const auto path = std::filesystem::temp_directory_path() / "trpts_test_checkpoint.trpt";
  save_checkpoint(model, path);
  auto loaded = load_checkpoint(path);
  std::filesystem::remove(path);
  EXPECT_EQ(loaded.config(), model.config());
  EXPECT_EQ(snapshot(loaded), snapshot(model));
  const auto a = model.forward(val.images, val.size()).logits;
  const auto b = loaded.forward(val.images, val.size()).logits;
  EXPECT_TRUE(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
}

TEST(Metrics, CsvHeaderAndRows) {
  const auto path = std::filesystem::temp_directory_path() / "trpts_test_metrics.csv";
  write_metrics_csv(path, {{1, 0.5, 0.25, 1e-3}, {2, 0.25, 0.5, 1e-5}});
  std::ifstream in(path);
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  std::filesystem::remove(path);
  EXPECT_EQ(header, "epoch,train_loss,val_accuracy,lr");
  EXPECT_EQ(row.substr(0, 13), "1,0.5,0.25,0.");
}

}  // namespace
}  // namespace trpts
