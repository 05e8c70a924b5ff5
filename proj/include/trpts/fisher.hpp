// Copyright 2026 The TR-PTS Authors
// SPDX-License-Identifier: Apache-2.0

// Diagonal Fisher information from squared cross-entropy gradients.
//
// The unit of averaging is the batch: each processed batch contributes the
// elementwise square of its mean-loss gradient, and scores are the mean of
// those squares over batches.

#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "trpts/data.hpp"
#include "trpts/parameters.hpp"
#include "trpts/tensor_pack.hpp"
#include "trpts/vit.hpp"

namespace trpts {

struct FisherScores {
  ParamLayout layout;
  std::vector<std::vector<double>> values;  // one buffer per parameter
  std::int64_t sample_count = 0;            // examples seen
  std::int64_t batch_count = 0;             // batches averaged over

  static FisherScores zeros(const ParamLayout& layout);
  bool empty() const { return batch_count == 0; }
  double min_value() const;
  /// Multiply every score by factor (used to probe scale invariance).
  FisherScores scaled(double factor) const;

  TensorPack to_pack() const;
  static FisherScores from_pack(const TensorPack& pack, const ParamLayout& layout);
};

/// Produces the scalar loss of one batch; called once per batch index.
template <typename S>
using BatchLoss = std::function<Tensor<S>(std::int64_t batch_index)>;

/// Core accumulator over an arbitrary differentiable model.
/// batch_sizes[i] is the number of examples in batch i.
template <typename S>
FisherScores accumulate_fisher(ParameterRegistry<S>& params, const BatchLoss<S>& loss,
                               const std::vector<std::int64_t>& batch_sizes);

struct FimOptions {
  std::int64_t num_batches = 0;  // 0: one full pass over the dataset
  std::int64_t batch_size = 32;
  std::uint64_t seed = 0;
  bool with_replacement = false;  // allow num_batches * batch_size > |dataset|
  double loss_multiplier = 1.0;
};

/// Scores a ViT on a labeled dataset with no refinement plan active.
template <typename S>
FisherScores estimate_fim(ViTModel<S>& model, const Dataset& data, const FimOptions& options);

/// Batch-count weighted mean of two score sets over the same registry.
FisherScores merge_scores(const FisherScores& a, const FisherScores& b);

}  // namespace trpts
