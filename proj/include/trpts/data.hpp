// Copyright 2026 The TR-PTS Authors
// SPDX-License-Identifier: Apache-2.0

// Seeded synthetic image-classification tasks standing in for downstream
// benchmarks at desk scale.
//
//   shape-class     one filled shape (square, disk, triangle, cross)
//   quadrant-class  one blob; the label is the quadrant holding its center
//   count-class     1..K small squares; the label is the count minus one
//
// Images are grayscale, values in [0,1] before additive Gaussian noise.

#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "trpts/tensor_pack.hpp"

namespace trpts {

enum class TaskFamily { kShape, kQuadrant, kCount };

std::string to_string(TaskFamily family);
TaskFamily parse_task_family(std::string_view text);

struct Dataset {
  std::string name;
  int height = 0;
  int width = 0;
  int channels = 1;
  int num_classes = 0;
  std::vector<float> images;  // [n, H, W, C]
  std::vector<std::int64_t> labels;

  std::int64_t size() const { return static_cast<std::int64_t>(labels.size()); }
  std::int64_t image_numel() const { return std::int64_t{height} * width * channels; }
  std::span<const float> image(std::int64_t i) const;

  TensorPack to_pack() const;
  static Dataset from_pack(const TensorPack& pack, std::string name = {});
};

/// Contiguous copy of the selected examples.
struct Batch {
  std::vector<float> images;
  std::vector<std::int64_t> labels;
  std::int64_t size() const { return static_cast<std::int64_t>(labels.size()); }
};

Batch make_batch(const Dataset& data, std::span<const std::int64_t> indices);

/// Shuffled partition of [0, n) into batches of batch_size (last may be short).
std::vector<std::vector<std::int64_t>> shuffled_batches(std::int64_t n, std::int64_t batch_size,
                                                        std::mt19937_64& rng);

struct SyntheticTaskSpec {
  TaskFamily family = TaskFamily::kShape;
  int image_size = 32;
  int num_classes = 4;
  std::int64_t train_size = 1000;
  std::int64_t val_size = 500;
  std::int64_t test_size = 500;
  double noise = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
};

struct TaskSplits {
  Dataset train;
  Dataset val;
  Dataset test;
};

/// Renders one split. Labels are exactly balanced (i mod K) and shuffled.
/// Each split draws from its own named stream, so splits are disjoint by
/// construction.
Dataset generate_split(const SyntheticTaskSpec& spec, std::string_view split, std::int64_t count);
TaskSplits generate_task(const SyntheticTaskSpec& spec);

}  // namespace trpts
