// Copyright 2026 The TR-PTS Authors
// SPDX-License-Identifier: Apache-2.0

// Analytic FLOPs accounting, layer histograms of the Fisher top set, mask
// overlap matrices, experiment reports and ablation tables.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "trpts/selector.hpp"
#include "trpts/token_refiner.hpp"
#include "trpts/vit.hpp"

namespace trpts {

/// Per-image FLOPs of one transformer block, counting a multiply-accumulate
/// as 2 FLOPs. Softmax, LayerNorm, GELU and residual adds are not counted.
std::uint64_t attention_flops(std::int64_t tokens, std::int64_t dim);
std::uint64_t mlp_flops(std::int64_t tokens, std::int64_t dim, std::int64_t hidden);

struct LayerFlops {
  int layer = 0;
  std::int64_t tokens = 0;
  std::uint64_t attention = 0;
  std::uint64_t mlp = 0;
};

struct FlopsReport {
  std::vector<LayerFlops> layers;          // with the plan applied
  std::uint64_t embedding = 0;             // patch projection
  std::uint64_t head = 0;                  // classifier
  std::uint64_t planned_total = 0;
  std::uint64_t unplanned_total = 0;
  double reduction = 0.0;                  // 1 - planned / unplanned

  nlohmann::json to_json() const;
};

/// Per-image counts; plan may be null.
FlopsReport flops_report(const ModelConfig& config, const RefinePlan* plan);

struct LayerDistribution {
  std::vector<std::int64_t> counts;   // per block
  std::vector<double> fractions;      // per block
  std::int64_t non_block_count = 0;
  double non_block_fraction = 0.0;
  std::int64_t total = 0;

  nlohmann::json to_json() const;
};

LayerDistribution layer_distribution(std::span<const ParamIndex> top_set, const ParamLayout& layout,
                                     int num_layers);

/// Pairwise Jaccard overlap; needs at least two congruent masks.
std::vector<std::vector<double>> overlap_matrix(const std::vector<SelectionMask>& masks);

struct ExperimentReport {
  std::string name;        // variant label, e.g. "tr-pts"
  std::string task;        // fine-tuning task family
  std::uint64_t seed = 0;
  std::string config_hash;
  double accuracy = 0.0;   // test split
  double val_accuracy = 0.0;
  std::int64_t selected = 0;
  std::int64_t total = 0;
  double trainable_fraction = 0.0;
  std::vector<double> layer_weights;
  std::vector<std::int64_t> budgets;
  std::optional<RefinePlan> plan;
  FlopsReport flops;

  nlohmann::json to_json() const;
};

enum class AblationKind { kComponents, kPlacement };

/// One configuration of an ablation run, averaged over seeds.
struct AblationEntry {
  bool token_selection = false;
  bool param_selection = false;
  PlacementMode placement = PlacementMode::kSparse;  // placement table only
  double rho = 1.0;                                  // placement table only
  std::vector<double> accuracies;                    // one per seed
  double trainable_fraction = 0.0;
  double flops_reduction = 0.0;

  double mean_accuracy() const;
};

struct AblationRow {
  std::string configuration;
  std::optional<AblationEntry> entry;  // empty: cell absent
};

struct AblationTable {
  AblationKind kind = AblationKind::kComponents;
  std::vector<AblationRow> rows;

  std::string to_csv() const;
  nlohmann::json to_json() const;
};

/// Arranges entries into the fixed cell order of the table kind. The
/// components table has four cells (neither, token only, parameter only,
/// both); the placement table has dense/random/sparse at rho 0.95 and 0.8.
/// Duplicate cells or rho values outside {0.95, 0.8} raise InputError.
AblationTable ablation_table(const std::vector<AblationEntry>& entries, AblationKind kind);

std::string matrix_to_csv(const std::vector<std::string>& labels, const std::vector<std::vector<double>>& m);

void write_text(const std::filesystem::path& path, const std::string& text);
void write_json(const std::filesystem::path& path, const nlohmann::json& value);
nlohmann::json read_json(const std::filesystem::path& path);

}  // namespace trpts
