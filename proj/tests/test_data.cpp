// Copyright 2026 The TR-PTS Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <set>

#include "trpts/data.hpp"
#include "trpts/error.hpp"

namespace trpts {
namespace {

SyntheticTaskSpec spec(TaskFamily family, double noise = 0.1, int classes = 4) {
  SyntheticTaskSpec s;
  s.family = family;
  s.num_classes = classes;
  s.noise = noise;
  s.train_size = 200;
  s.val_size = 60;
  s.test_size = 60;
  s.seed = 11;
  return s;
}

TEST(Data, QuadrantLabelsBalanced) {
  auto s = spec(TaskFamily::kQuadrant);
  const auto d = generate_split(s, "train", 4000);
  std::vector<std::int64_t> count(4, 0);
  for (auto y : d.labels) {
    ASSERT_GE(y, 0);
    ASSERT_LT(y, 4);
    ++count[y];
  }
  for (auto c : count) EXPECT_NEAR(static_cast<double>(c) / 4000.0, 0.25, 0.05);
}

TEST(Data, NoiseFreePixelsComeFromRenderer) {
  for (auto family : {TaskFamily::kShape, TaskFamily::kQuadrant, TaskFamily::kCount}) {
    const auto d = generate_split(spec(family, 0.0), "train", 50);
    for (std::int64_t i = 0; i < d.size(); ++i) {
      std::int64_t lit = 0;
      for (float p : d.image(i)) {
        EXPECT_TRUE(p == 0.0f || (p >= 0.6f && p <= 1.0f)) << p;
        lit += p > 0.0f;
      }
      EXPECT_GT(lit, 0);
    }
  }
}

TEST(Data, QuadrantLabelMatchesBlobCentroid) {
  const auto d = generate_split(spec(TaskFamily::kQuadrant, 0.0), "val", 100);
  for (std::int64_t i = 0; i < d.size(); ++i) {
    double sy = 0, sx = 0, n = 0;
    const auto img = d.image(i);
    for (int y = 0; y < d.height; ++y)
      for (int x = 0; x < d.width; ++x)
        if (img[y * d.width + x] > 0) sy += y, sx += x, n += 1;
    const int quadrant = (sy / n >= d.height / 2.0 ? 2 : 0) + (sx / n >= d.width / 2.0 ? 1 : 0);
    EXPECT_EQ(quadrant, d.labels[i]);
  }
}

TEST(Data, DeterministicAndSplitsDiffer) {
  auto s = spec(TaskFamily::kShape);
  const auto a = generate_task(s), b = generate_task(s);
  EXPECT_EQ(a.train.to_pack().serialize(), b.train.to_pack().serialize());
  EXPECT_EQ(a.test.to_pack().serialize(), b.test.to_pack().serialize());
  EXPECT_EQ(a.train.size(), 200);
  EXPECT_EQ(a.val.size(), 60);
  std::set<std::vector<float>> train_images;
  for (std::int64_t i = 0; i < a.train.size(); ++i) {
    train_images.emplace(a.train.image(i).begin(), a.train.image(i).end());
  }
  for (std::int64_t i = 0; i < a.val.size(); ++i) {
    EXPECT_FALSE(train_images.count({a.val.image(i).begin(), a.val.image(i).end()}));
  }
  s.seed = 12;
  EXPECT_NE(generate_task(s).train.to_pack().serialize(), a.train.to_pack().serialize());
}

TEST(Data, PackRoundTripAndValidation) {
  const auto d = generate_split(spec(TaskFamily::kCount, 0.1, 5), "train", 30);
  const auto back = Dataset::from_pack(TensorPack::parse(d.to_pack().serialize()));
  EXPECT_EQ(back.images, d.images);
  EXPECT_EQ(back.labels, d.labels);
  EXPECT_EQ(back.num_classes, 5);
  auto bad = d;
  bad.labels[0] = 7;
  EXPECT_THROW(Dataset::from_pack(bad.to_pack()), InputError);
}

TEST(Data, SpecValidation) {
  EXPECT_THROW(spec(TaskFamily::kQuadrant, 0.1, 3).validate(), ConfigError);
  EXPECT_THROW(spec(TaskFamily::kShape, 0.1, 5).validate(), ConfigError);
  EXPECT_THROW(spec(TaskFamily::kShape, -1.0).validate(), ConfigError);
  EXPECT_THROW(parse_task_family("texture-class"), ConfigError);
  EXPECT_EQ(parse_task_family(to_string(TaskFamily::kCount)), TaskFamily::kCount);
}

TEST(Data, BatchesPartitionIndices) {
  std::mt19937_64 rng(3);
  const auto batches = shuffled_batches(10, 4, rng);
  ASSERT_EQ(batches.size(), 3u);
  EXPECT_EQ(batches[2].size(), 2u);
  std::set<std::int64_t> seen;
  for (const auto& b : batches) seen.insert(b.begin(), b.end());
  EXPECT_EQ(seen.size(), 10u);
  const auto d = generate_split(spec(TaskFamily::kShape), "train", 5);
  const std::int64_t idx[] = {4, 0};
  const auto batch = make_batch(d, idx);
  EXPECT_EQ(batch.labels, (std::vector<std::int64_t>{d.labels[4], d.labels[0]}));
  const std::int64_t bad[] = {5};
  EXPECT_THROW(make_batch(d, bad), InputError);
}

}  // namespace
}  // namespace trpts
