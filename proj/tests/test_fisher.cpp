// Copyright 2026 The TR-PTS Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "test_support.hpp"
#include "trpts/error.hpp"
#include "trpts/fisher.hpp"

namespace trpts {
namespace {

using testing::random_dataset;
using testing::tiny_config;

// One scalar weight w; logits [0, w x] so p(y=1) = sigmoid(w x).
struct Logistic {
  ParameterRegistry<double> params;
  std::vector<double> xs, ys;

  Logistic(double w, std::vector<double> x, std::vector<double> y) : xs(std::move(x)), ys(std::move(y)) {
    params.add(-1, "w", Tensor<double>::from({1}, {w}, true));
  }

  // Loss of the examples listed in batches[b].
  BatchLoss<double> loss(const std::vector<std::vector<int>>& batches) {
    return [this, batches](std::int64_t b) {
      const auto& ids = batches[static_cast<std::size_t>(b)];
      const auto n = static_cast<std::int64_t>(ids.size());
      std::vector<double> feats;
      std::vector<std::int64_t> labels;
      for (int i : ids) {
        feats.push_back(xs[i]);
        labels.push_back(static_cast<std::int64_t>(ys[i]));
      }
      // weight rows [0] and [w]: logits [0, w x]
      auto weight = concat_rows(Tensor<double>::zeros({1, 1, 1}), reshape(params[0].tensor, {1, 1, 1}));
      auto logits = linear(Tensor<double>::from({n, 1}, feats), reshape(weight, {2, 1}), Tensor<double>());
      return cross_entropy(logits, labels);
    };
  }
};

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

TEST(Fisher, LogisticOracle) {
  const double w = 0.7;
  Logistic m(w, {1.0, -2.0, 0.5}, {1, 0, 0});
  auto scores = accumulate_fisher<double>(m.params, m.loss({{0}, {1}, {2}}), {1, 1, 1});
  double expected = 0;
  for (int i = 0; i < 3; ++i) {
    const double g = (sigmoid(w * m.xs[i]) - m.ys[i]) * m.xs[i];
    expected += g * g;
  }
  expected /= 3;
  EXPECT_NEAR(scores.values[0][0], expected, 1e-12);
  EXPECT_EQ(scores.batch_count, 3);
  EXPECT_EQ(scores.sample_count, 3);
}

TEST(Fisher, SingleAndTwoBatchDefinitions) {
  Logistic m(-0.3, {1.5, 2.0, -1.0, 0.25}, {1, 1, 0, 1});
  auto g_of = [&](std::vector<int> ids) {
    double g = 0;
    for (int i : ids) g += (sigmoid(-0.3 * m.xs[i]) - m.ys[i]) * m.xs[i];
    return g / static_cast<double>(ids.size());
  };
  auto one = accumulate_fisher<double>(m.params, m.loss({{0, 1, 2, 3}}), {4});
  EXPECT_NEAR(one.values[0][0], std::pow(g_of({0, 1, 2, 3}), 2), 1e-12);
  auto two = accumulate_fisher<double>(m.params, m.loss({{0, 1}, {2, 3}}), {2, 2});
  EXPECT_NEAR(two.values[0][0], (std::pow(g_of({0, 1}), 2) + std::pow(g_of({2, 3}), 2)) / 2, 1e-12);
}

class FisherOnViT : public ::testing::Test {
 protected:
  ModelConfig config = tiny_config(2, 8, 2, 8, 4, 3, 4);
  Dataset data;
  void SetUp() override {
    std::mt19937_64 rng(31);
    data = random_dataset(rng, 40, config);
  }
};

TEST_F(FisherOnViT, LossMultiplierScalesQuadratically) {
  ViTModel<double> model(config);
  FimOptions opt;
  opt.batch_size = 10;
  opt.seed = 3;
  auto base = estimate_fim(model, data, opt);
  for (double c : {0.5, 3.0}) {
    opt.loss_multiplier = c;
    auto scaled = estimate_fim(model, data, opt);
    for (std::size_t i = 0; i < base.values.size(); ++i) {
      for (std::size_t j = 0; j < base.values[i].size(); ++j) {
        const double want = c * c * base.values[i][j];
        EXPECT_NEAR(scaled.values[i][j], want, 1e-9 * std::max(1e-12, std::abs(want)) + 1e-300);
      }
    }
  }
}

TEST_F(FisherOnViT, NonNegativeAndLeavesModelUntouched) {
  ViTModel<double> model(config);
  auto before = model.parameters().at("block0.attn.q.weight").tensor.data();
  const std::vector<double> snapshot(before.begin(), before.end());
  FimOptions opt;
  opt.batch_size = 8;
  auto s = estimate_fim(model, data, opt);
  EXPECT_EQ(s.batch_count, 5);
  EXPECT_EQ(s.sample_count, 40);
  EXPECT_GE(s.min_value(), 0.0);
  auto after = model.parameters().at("block0.attn.q.weight").tensor.data();
  EXPECT_TRUE(std::equal(snapshot.begin(), snapshot.end(), after.begin()));
  for (const auto& p : model.parameters()) EXPECT_FALSE(p.tensor.requires_grad());
}

// Per-batch losses with the batches fixed up front, so order can be permuted.
BatchLoss<double> fixed_batches(ViTModel<double>& model, const Dataset& data,
                                const std::vector<std::vector<std::int64_t>>& batches) {
  return [&model, &data, batches](std::int64_t b) {
    const auto batch = make_batch(data, batches[static_cast<std::size_t>(b)]);
    auto trace = model.forward(batch.images, batch.size());
    return cross_entropy(trace.logits, std::span<const std::int64_t>(batch.labels));
  };
}

TEST_F(FisherOnViT, InvariantToBatchOrderAndMergeMatchesRecompute) {
  ViTModel<double> model(config);
  model.parameters().set_requires_grad(true);
  std::mt19937_64 rng(5);
  auto batches = shuffled_batches(data.size(), 8, rng);
  std::vector<std::int64_t> sizes(batches.size(), 8);
  auto all = accumulate_fisher<double>(model.parameters(), fixed_batches(model, data, batches), sizes);

  auto reversed = batches;
  std::reverse(reversed.begin(), reversed.end());
  auto rev = accumulate_fisher<double>(model.parameters(), fixed_batches(model, data, reversed), sizes);

  std::vector<std::vector<std::int64_t>> first(batches.begin(), batches.begin() + 2);
  std::vector<std::vector<std::int64_t>> rest(batches.begin() + 2, batches.end());
  auto a = accumulate_fisher<double>(model.parameters(), fixed_batches(model, data, first), {8, 8});
  auto b = accumulate_fisher<double>(model.parameters(), fixed_batches(model, data, rest), {8, 8, 8});
  auto merged = merge_scores(a, b);
  EXPECT_EQ(merged.batch_count, 5);
  EXPECT_EQ(merged.sample_count, 40);

  for (std::size_t i = 0; i < all.values.size(); ++i) {
    for (std::size_t j = 0; j < all.values[i].size(); ++j) {
      const double ref = all.values[i][j];
      EXPECT_LE(testing::relative_error(rev.values[i][j], ref, 1e-12), 1e-6);
      EXPECT_LE(testing::relative_error(merged.values[i][j], ref, 1e-12), 1e-6);
    }
  }
}

TEST_F(FisherOnViT, MergeIdentityAndEqualHalves) {
  ViTModel<double> model(config);
  FimOptions opt;
  opt.batch_size = 10;
  auto s = estimate_fim(model, data, opt);
  auto empty = FisherScores::zeros(s.layout);
  auto left = merge_scores(s, empty);
  auto same = merge_scores(s, s);
  EXPECT_EQ(left.values, s.values);
  for (std::size_t i = 0; i < s.values.size(); ++i) {
    for (std::size_t j = 0; j < s.values[i].size(); ++j) EXPECT_DOUBLE_EQ(same.values[i][j], s.values[i][j]);
  }
  ViTModel<double> other(tiny_config(3, 8, 2, 8, 4, 3, 4));
  auto wrong = estimate_fim(other, data, opt);
  EXPECT_THROW(merge_scores(s, wrong), InputError);
}

TEST_F(FisherOnViT, BatchBudgetAndPackRoundTrip) {
  ViTModel<double> model(config);
  FimOptions opt;
  opt.batch_size = 16;
  opt.num_batches = 4;
  EXPECT_THROW(estimate_fim(model, data, opt), ConfigError);
  opt.with_replacement = true;
  auto s = estimate_fim(model, data, opt);
  EXPECT_EQ(s.batch_count, 4);
  auto back = FisherScores::from_pack(TensorPack::parse(s.to_pack().serialize()), s.layout);
  EXPECT_EQ(back.values, s.values);
  EXPECT_EQ(back.batch_count, s.batch_count);
  EXPECT_EQ(back.sample_count, s.sample_count);
}

TEST(Fisher, NonFiniteLossIsNumericError) {
  Logistic m(std::numeric_limits<double>::quiet_NaN(), {1.0}, {1});
  EXPECT_THROW(accumulate_fisher<double>(m.params, m.loss({{0}}), {1}), NumericError);
}

}  // namespace
}  // namespace trpts
