// Copyright 2026 The TR-PTS Authors
// SPDX-License-Identifier: Apache-2.0

// Task-relevant token selection and merging driven by [CLS] attention.
//
// A refining layer keeps the floor(rho * N) non-[CLS] tokens that receive the
// most head-averaged [CLS] attention, in their original order, and folds the
// rest into one token weighted by that same attention. The merged token is
// appended last. When nothing would be discarded the sequence is returned
// unchanged.

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "trpts/tensor.hpp"

namespace trpts {

enum class PlacementMode { kSparse, kDense, kRandom, kExplicit };

std::string to_string(PlacementMode mode);
PlacementMode parse_placement_mode(std::string_view text);

struct RefinePlan {
  std::vector<int> layers;  // strictly increasing
  double rho = 1.0;
  PlacementMode mode = PlacementMode::kExplicit;

  void validate(int num_layers) const;
  bool refines(int layer) const;
};

/// floor(rho * n), guarded against representation error in rho (0.7 * 10 is
/// 7, not 6). Throws ConfigError when the result is below one.
std::int64_t kept_count(double rho, std::int64_t n);

/// Head-mean of the [CLS] query row of one sample's attention
/// [heads, tokens, tokens], restricted to the non-[CLS] columns.
template <typename S>
std::vector<S> cls_attention_scores(std::span<const S> attention, int heads, std::int64_t tokens);

/// Indices of the kept_count(rho, N) largest scores in increasing index
/// order. Ties prefer the lower index.
template <typename S>
std::vector<std::int64_t> select_tokens(std::span<const S> scores, double rho);

/// Normalized merge weights over all N tokens: a_i / sum a_I on discarded
/// indices, zero elsewhere. Falls back to a uniform mean when the discarded
/// mass is below 1e-12.
template <typename S>
std::vector<S> merge_weights(std::span<const S> scores, std::span<const std::int64_t> discarded);

/// Weighted average of the discarded rows of hidden[N, d] -> [1, d].
template <typename S>
Tensor<S> merge_tokens(std::span<const S> scores, const Tensor<S>& hidden,
                       std::span<const std::int64_t> discarded);

template <typename S>
struct RefineDecision {
  std::vector<std::int64_t> kept;       // token indices in [0, N)
  std::vector<std::int64_t> discarded;  // complement, increasing
  std::vector<S> weights;               // merge weights over [0, N)
};

template <typename S>
RefineDecision<S> decide_refinement(std::span<const S> scores, double rho);

/// hidden[1 + N, d] with [CLS] at row 0 -> [1 + floor(rho N) + 1, d].
template <typename S>
Tensor<S> refine(const Tensor<S>& hidden, std::span<const S> scores, double rho);

/// Batched form over hidden[B, 1 + N, d]; scores[b] has N entries. All
/// batch elements keep the same count, so the result stays rectangular.
template <typename S>
Tensor<S> refine_batch(const Tensor<S>& hidden, const std::vector<std::vector<S>>& scores,
                       double rho, std::vector<RefineDecision<S>>* decisions = nullptr);

/// Chooses refining layers from per-layer importance. Layer 0 is never
/// chosen by the automatic modes.
RefinePlan plan_refining_layers(std::span<const double> layer_weights, int num_refine_layers,
                                PlacementMode mode, double rho, std::uint64_t seed,
                                std::span<const int> explicit_layers = {});

/// Token count entering the layer after a refining layer that saw `tokens`
/// rows (including [CLS]).
std::int64_t refined_token_count(std::int64_t tokens, double rho);

}  // namespace trpts
