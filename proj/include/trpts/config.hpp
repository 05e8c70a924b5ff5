// Copyright 2026 The TR-PTS Authors
// SPDX-License-Identifier: Apache-2.0

// Experiment configuration read from an INI file.
//
//   [model]    image_size channels patch_size embed_dim num_layers num_heads mlp_ratio
//   [data]     task_a task_b compare_task num_classes noise and split sizes
//   [pretrain] optimizer settings for task A (all parameters train)
//   [score]    num_batches batch_size with_replacement
//   [select]   top_m c_min scope always_trainable
//   [plan]     rho mode num_layers layers
//   [finetune] optimizer settings for task B
//   [run]      seed ablation_seeds
//
// Every key has a default; unknown sections or keys are rejected.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "trpts/data.hpp"
#include "trpts/fisher.hpp"
#include "trpts/selector.hpp"
#include "trpts/token_refiner.hpp"
#include "trpts/trainer.hpp"
#include "trpts/vit.hpp"

namespace trpts {

struct DataSettings {
  TaskFamily task_a = TaskFamily::kShape;
  TaskFamily task_b = TaskFamily::kCount;
  TaskFamily compare_task = TaskFamily::kQuadrant;  // second downstream task for overlap analysis
  int num_classes = 4;
  double noise = 0.1;
  std::int64_t pretrain_train = 3000;
  std::int64_t pretrain_val = 500;
  std::int64_t pretrain_test = 500;
  std::int64_t finetune_train = 500;
  std::int64_t finetune_val = 500;
  std::int64_t finetune_test = 500;

  SyntheticTaskSpec spec(TaskFamily family, bool pretraining, int image_size, std::uint64_t seed) const;
};

struct PlanSettings {
  double rho = 0.95;
  PlacementMode mode = PlacementMode::kSparse;
  int num_layers = 3;
  std::vector<int> layers;  // explicit mode only
};

struct RunSettings {
  std::uint64_t seed = 0;
  std::vector<std::uint64_t> ablation_seeds = {0, 1, 2};
};

struct RunConfig {
  ModelConfig model;
  DataSettings data;
  TrainConfig pretrain;
  FimOptions score;
  SelectorConfig select;
  PlanSettings plan;
  TrainConfig finetune;
  RunSettings run;

  RunConfig();
  static RunConfig load(const std::filesystem::path& path);
  static RunConfig parse(const std::string& ini_text);

  /// Sets one "section.key" from its text form.
  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  static const std::vector<std::string>& keys();

  /// Canonical "section.key" -> text map.
  std::map<std::string, std::string> to_map() const;
  /// Canonical INI text; parse(dump()) reproduces this configuration.
  std::string dump() const;
  /// 16 hex digits of FNV-1a over dump().
  std::string hash() const;

  /// Propagates the run seed into every component and checks ranges.
  void finalize();
  void validate() const;
};

}  // namespace trpts
