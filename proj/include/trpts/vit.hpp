// Copyright 2026 The TR-PTS Authors
// SPDX-License-Identifier: Apache-2.0

// Minimal pre-norm Vision Transformer with a prepended [CLS] token.
//
// Patches are flattened row-major over the patch grid, then row-major inside
// each patch with channels last. The forward pass records per-layer [CLS]
// attention (head mean) and token counts, and applies token refinement right
// after the output of every layer listed in the refine plan.

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "trpts/parameters.hpp"
#include "trpts/tensor.hpp"
#include "trpts/token_refiner.hpp"

namespace trpts {

struct ModelConfig {
  int image_height = 32;
  int image_width = 32;
  int channels = 1;
  int patch_size = 4;
  int embed_dim = 64;
  int num_layers = 12;
  int num_heads = 4;
  int mlp_ratio = 4;
  int num_classes = 4;
  std::uint64_t seed = 0;

  void validate() const;
  std::int64_t num_patches() const;
  std::int64_t patch_dim() const { return std::int64_t{patch_size} * patch_size * channels; }
  std::int64_t head_dim() const { return embed_dim / num_heads; }
  std::int64_t mlp_hidden() const { return std::int64_t{embed_dim} * mlp_ratio; }
  std::int64_t image_numel() const {
    return std::int64_t{image_height} * image_width * channels;
  }
  bool operator==(const ModelConfig&) const = default;
};

/// image[H, W, C] -> [N, P*P*C].
template <typename S>
Tensor<S> patchify(const Tensor<S>& image, const ModelConfig& config);

/// images[B, H, W, C] (flat, channels last) -> [B, N, P*P*C].
template <typename S>
Tensor<S> patchify_batch(std::span<const float> images, std::int64_t batch, const ModelConfig& config);

struct ForwardOptions {
  bool record_attention = false;    // keep full [B, h, T, T] matrices per layer
  bool record_refinements = false;  // keep per-sample kept/merged patch origins
};

/// Original patch indices touched by one refinement of one sample.
struct RefinementRecord {
  int layer = 0;
  std::vector<std::int64_t> kept_patch_indices;
  std::vector<std::int64_t> merged_from_indices;
};

template <typename S>
struct ForwardTrace {
  std::int64_t batch = 0;
  std::vector<std::int64_t> token_counts;       // tokens seen by each layer
  std::vector<std::vector<S>> attention;         // per layer [B, h, T, T], optional
  std::vector<std::vector<S>> cls_attention;     // per layer [B, T], head mean of row 0
  std::vector<std::vector<RefinementRecord>> refinements;  // per sample, optional
  Tensor<S> final_cls;                           // [B, d] before the final norm
  Tensor<S> logits;                              // [B, K]
};

template <typename S>
class ViTModel {
 public:
  explicit ViTModel(ModelConfig config);
  ViTModel(const ViTModel& other);
  ViTModel& operator=(const ViTModel& other);
  ViTModel(ViTModel&&) noexcept = default;
  ViTModel& operator=(ViTModel&&) noexcept = default;

  const ModelConfig& config() const { return config_; }
  ParameterRegistry<S>& parameters() { return params_; }
  const ParameterRegistry<S>& parameters() const { return params_; }

  ForwardTrace<S> forward(std::span<const float> images, std::int64_t batch,
                          const RefinePlan* plan = nullptr, ForwardOptions options = {}) const;
  ForwardTrace<S> forward_patches(const Tensor<S>& patches, const RefinePlan* plan = nullptr,
                                  ForwardOptions options = {}) const;
  /// Final LayerNorm and classifier head on the [CLS] representation.
  Tensor<S> classify(const ForwardTrace<S>& trace) const;

  /// Replaces the classifier with a freshly initialized one for num_classes.
  void reset_head(int num_classes, std::uint64_t seed);

  /// Copies parameter values from a model of the same architecture.
  template <typename T>
  void copy_values_from(const ViTModel<T>& other);

 private:
  void build(std::uint64_t seed);
  const Tensor<S>& p(std::size_t index) const { return params_[index].tensor; }

  struct BlockSlots {
    std::size_t norm1_gain, norm1_bias;
    std::size_t q_w, q_b, k_w, k_b, v_w, v_b, o_w, o_b;
    std::size_t norm2_gain, norm2_bias;
    std::size_t fc1_w, fc1_b, fc2_w, fc2_b;
  };

  ModelConfig config_;
  ParameterRegistry<S> params_;
  std::size_t patch_w_ = 0, patch_b_ = 0, cls_ = 0, pos_ = 0;
  std::size_t norm_gain_ = 0, norm_bias_ = 0, head_w_ = 0, head_b_ = 0;
  std::vector<BlockSlots> blocks_;
};

/// Argmax of each logits row, ties to the lower class index.
template <typename S>
std::vector<std::int64_t> argmax_rows(const Tensor<S>& logits);

}  // namespace trpts
