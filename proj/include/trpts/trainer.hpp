// Copyright 2026 The TR-PTS Authors
// SPDX-License-Identifier: Apache-2.0

// Masked fine-tuning: gradients are multiplied by a 0/1 mask before the
// optimizer sees them, so entries outside the mask never move and their Adam
// moments stay exactly zero.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "trpts/data.hpp"
#include "trpts/selector.hpp"
#include "trpts/token_refiner.hpp"
#include "trpts/vit.hpp"

namespace trpts {

enum class OptimizerKind { kAdam, kSgd };

std::string to_string(OptimizerKind kind);
OptimizerKind parse_optimizer(std::string_view text);

struct TrainConfig {
  double learning_rate = 1e-3;        // peak rate after warmup
  double final_learning_rate = 1e-5;  // rate at the last step
  std::int64_t warmup_steps = 0;
  int epochs = 10;
  std::int64_t batch_size = 32;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;
  std::string batching_stream = "batching/finetune";
  bool evaluate_every_epoch = true;  // off: EpochMetrics::val_accuracy is NaN

  void validate() const;
};

/// Learning rate at a 0-based step out of total_steps. Linear warmup to the
/// peak, then cosine decay reaching final_learning_rate at the last step.
double cosine_learning_rate(const TrainConfig& config, std::int64_t step, std::int64_t total_steps);

template <typename S>
struct TrainState {
  SelectionMask mask;
  std::vector<std::vector<S>> first_moment;
  std::vector<std::vector<S>> second_moment;
  std::int64_t step = 0;

  /// Zero moments congruent with the mask; marks fully masked parameters as
  /// not requiring gradients.
  static TrainState start(ParameterRegistry<S>& params, SelectionMask mask);
};

/// Applies one optimizer update from the gradients currently held by params.
template <typename S>
void apply_masked_update(ParameterRegistry<S>& params, TrainState<S>& state, const TrainConfig& config,
                         double learning_rate);

struct StepResult {
  double loss = 0.0;
  double learning_rate = 0.0;
};

template <typename S>
StepResult masked_step(ViTModel<S>& model, TrainState<S>& state, const Batch& batch,
                       const RefinePlan* plan, const TrainConfig& config, std::int64_t total_steps);

struct EpochMetrics {
  int epoch = 0;
  double train_loss = 0.0;
  double val_accuracy = 0.0;
  double learning_rate = 0.0;  // rate used by the last step of the epoch
};

template <typename S>
struct FineTuneResult {
  TrainState<S> state;
  std::vector<EpochMetrics> history;
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

template <typename S>
FineTuneResult<S> fine_tune(ViTModel<S>& model, const SelectionMask& mask, const RefinePlan* plan,
                            const Dataset& train, const Dataset& val, const TrainConfig& config,
                            const EpochCallback& on_epoch = {});

/// Top-1 accuracy, ties to the lower class index.
template <typename S>
double evaluate(const ViTModel<S>& model, const RefinePlan* plan, const Dataset& data,
                std::int64_t batch_size = 128);

template <typename S>
std::vector<std::int64_t> predict(const ViTModel<S>& model, const RefinePlan* plan, const Dataset& data,
                                  std::int64_t batch_size = 128);

SelectionMask full_mask(const ParamLayout& layout);
/// Only parameters matching the patterns are trainable (e.g. the head for probing).
SelectionMask pattern_mask(const ParamLayout& layout, const std::vector<std::string>& patterns);

void write_metrics_csv(const std::filesystem::path& path, const std::vector<EpochMetrics>& history);

TensorPack model_to_pack(const ViTModel<float>& model);
ViTModel<float> model_from_pack(const TensorPack& pack);
void save_checkpoint(const ViTModel<float>& model, const std::filesystem::path& path);
ViTModel<float> load_checkpoint(const std::filesystem::path& path);

}  // namespace trpts
