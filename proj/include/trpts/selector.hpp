// Copyright 2026 The TR-PTS Authors
// SPDX-License-Identifier: Apache-2.0

// Task-relevant parameter selection.
//
// 1. Take the top M% of scoped parameters by Fisher score.
// 2. w_l = share of that set falling in transformer block l.
// 3. C_l = max(1, floor(w_l / min_{w>0} w * C_min)), capped at the widest
//    eligible fan-in of block l.
// 4. In every eligible weight matrix of block l (rows are output neurons),
//    keep the min(C_l, fan_in) highest-scoring connections of each row.

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "trpts/fisher.hpp"
#include "trpts/parameters.hpp"
#include "trpts/tensor_pack.hpp"

namespace trpts {

struct SelectorConfig {
  double top_m_percent = 1.0;
  int c_min = 1;
  // Glob patterns ('*' and '?') over parameter names.
  std::vector<std::string> scope = {"block*.attn.q.weight", "block*.attn.k.weight",
                                    "block*.attn.v.weight", "block*.attn.o.weight",
                                    "block*.mlp.fc1.weight", "block*.mlp.fc2.weight"};
  std::vector<std::string> always_trainable = {"head.*"};

  void validate() const;
};

bool glob_match(std::string_view pattern, std::string_view text);
bool matches_any(const std::vector<std::string>& patterns, const std::string& name);

/// One scalar parameter: index into the registry and flat offset within it.
struct ParamIndex {
  std::uint32_t param = 0;
  std::uint64_t offset = 0;
  auto operator<=>(const ParamIndex&) const = default;
};

/// Top ceil(M/100 * |scope|) scoped entries. Ties go to the lexicographically
/// smaller parameter name, then the lower offset. Returned sorted by
/// (name, offset).
std::vector<ParamIndex> top_m_set(const FisherScores& scores, const SelectorConfig& config);

struct LayerImportance {
  std::vector<double> w;                  // per transformer block
  std::vector<std::int64_t> counts;       // top-set members per block
  std::int64_t non_block_count = 0;       // top-set members outside blocks
  std::int64_t top_m_size = 0;
};

LayerImportance layer_weights(std::span<const ParamIndex> top_set, const ParamLayout& layout,
                              int num_layers);

struct ConnectionBudget {
  std::vector<std::int64_t> c;
};

/// fan_in_cap[l] is the widest eligible fan-in in block l (no cap if empty).
ConnectionBudget connection_budget(std::span<const double> w, int c_min,
                                   std::span<const std::int64_t> fan_in_cap = {});

/// Widest fan-in among scoped weight matrices of every block.
std::vector<std::int64_t> eligible_fan_in(const ParamLayout& layout, const SelectorConfig& config,
                                          int num_layers);

struct SelectionMask {
  ParamLayout layout;
  std::vector<std::vector<std::uint8_t>> bits;

  static SelectionMask zeros(const ParamLayout& layout);
  std::int64_t selected() const;
  std::int64_t total() const { return total_numel(layout); }
  double trainable_fraction() const;
  std::vector<std::int64_t> selected_per_layer(int num_layers) const;

  TensorPack to_pack() const;
  static SelectionMask from_pack(const TensorPack& pack, const ParamLayout& layout);
};

SelectionMask select_per_neuron(const FisherScores& scores, const ConnectionBudget& budget,
                                const SelectorConfig& config);

/// Jaccard index |A and B| / |A or B| of the selected sets (1 when both are empty).
double mask_overlap(const SelectionMask& a, const SelectionMask& b);

/// Runs the four stages end to end.
struct SelectionResult {
  std::vector<ParamIndex> top_set;
  LayerImportance importance;
  ConnectionBudget budget;
  SelectionMask mask;
};

SelectionResult select_parameters(const FisherScores& scores, const SelectorConfig& config,
                                  int num_layers);

}  // namespace trpts
