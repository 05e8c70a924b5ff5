// Copyright 2026 The TR-PTS Authors
// SPDX-License-Identifier: Apache-2.0

#include "trpts/analysis.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "trpts/error.hpp"

namespace trpts {

using nlohmann::json;

std::uint64_t attention_flops(std::int64_t tokens, std::int64_t dim) {
  const auto t = static_cast<std::uint64_t>(tokens), d = static_cast<std::uint64_t>(dim);
  return 2 * (4 * t * d * d + 2 * t * t * d);
}

std::uint64_t mlp_flops(std::int64_t tokens, std::int64_t dim, std::int64_t hidden) {
  const auto t = static_cast<std::uint64_t>(tokens);
  return 2 * (2 * t * static_cast<std::uint64_t>(dim) * static_cast<std::uint64_t>(hidden));
}

json FlopsReport::to_json() const {
  json per_layer = json::array();
  for (const auto& l : layers) {
    per_layer.push_back({{"layer", l.layer}, {"tokens", l.tokens}, {"attention_flops", l.attention},
                         {"mlp_flops", l.mlp}});
  }
  return {{"layers", per_layer},
          {"embedding_flops", embedding},
          {"head_flops", head},
          {"planned_total", planned_total},
          {"unplanned_total", unplanned_total},
          {"reduction", reduction}};
}

FlopsReport flops_report(const ModelConfig& config, const RefinePlan* plan) {
  config.validate();
  if (plan) plan->validate(config.num_layers);
  const std::int64_t d = config.embed_dim, hidden = config.mlp_hidden(), n = config.num_patches();
  FlopsReport report;
  report.embedding = 2 * static_cast<std::uint64_t>(n * config.patch_dim() * d);
  report.head = 2 * static_cast<std::uint64_t>(d * config.num_classes);
  report.planned_total = report.unplanned_total = report.embedding + report.head;
  std::int64_t tokens = n + 1;
  for (int l = 0; l < config.num_layers; ++l) {
    LayerFlops layer{l, tokens, attention_flops(tokens, d), mlp_flops(tokens, d, hidden)};
    report.planned_total += layer.attention + layer.mlp;
    report.unplanned_total += attention_flops(n + 1, d) + mlp_flops(n + 1, d, hidden);
    report.layers.push_back(layer);
    if (plan && plan->refines(l)) tokens = refined_token_count(tokens, plan->rho);
  }
  report.reduction = 1.0 - static_cast<double>(report.planned_total) / static_cast<double>(report.unplanned_total);
  return report;
}

json LayerDistribution::to_json() const {
  return {{"counts", counts}, {"fractions", fractions}, {"non_block_count", non_block_count},
          {"non_block_fraction", non_block_fraction}, {"total", total}};
}

LayerDistribution layer_distribution(std::span<const ParamIndex> top_set, const ParamLayout& layout,
                                     int num_layers) {
  if (top_set.empty()) throw InputError("layer distribution of an empty top set");
  const auto importance = layer_weights(top_set, layout, num_layers);
  LayerDistribution dist;
  dist.counts = importance.counts;
  dist.fractions = importance.w;
  dist.non_block_count = importance.non_block_count;
  dist.total = importance.top_m_size;
  dist.non_block_fraction = static_cast<double>(dist.non_block_count) / static_cast<double>(dist.total);
  return dist;
}

std::vector<std::vector<double>> overlap_matrix(const std::vector<SelectionMask>& masks) {
  if (masks.size() < 2) throw InputError("overlap matrix needs at least two masks");
  const auto n = masks.size();
  std::vector<std::vector<double>> m(n, std::vector<double>(n, 1.0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) m[i][j] = m[j][i] = mask_overlap(masks[i], masks[j]);
  }
  return m;
}

json ExperimentReport::to_json() const {
  json out = {{"name", name},
              {"task", task},
              {"seed", seed},
              {"config_hash", config_hash},
              {"test_accuracy", accuracy},
              {"val_accuracy", val_accuracy},
              {"selected", selected},
              {"total", total},
              {"trainable_fraction", trainable_fraction},
              {"layer_weights", layer_weights},
              {"budgets", budgets},
              {"flops", flops.to_json()}};
  if (plan) {
    out["plan"] = {{"layers", plan->layers}, {"rho", plan->rho}, {"mode", to_string(plan->mode)}};
  } else {
    out["plan"] = nullptr;
  }
  return out;
}

double AblationEntry::mean_accuracy() const {
  if (accuracies.empty()) return 0.0;
  return std::accumulate(accuracies.begin(), accuracies.end(), 0.0) / static_cast<double>(accuracies.size());
}

namespace {

const double kPlacementRhos[] = {0.95, 0.8};
const PlacementMode kPlacementModes[] = {PlacementMode::kDense, PlacementMode::kRandom, PlacementMode::kSparse};

std::string rho_label(double rho) { return std::abs(rho - 0.95) < 1e-9 ? "0.95" : "0.8"; }

std::string components_label(bool token, bool param) {
  if (token && param) return "tr-pts";
  if (param) return "param-only";
  if (token) return "token-only";
  return "linear";
}

int cell_of(const AblationEntry& e, AblationKind kind) {
  if (kind == AblationKind::kComponents) return (e.token_selection ? 1 : 0) + (e.param_selection ? 2 : 0);
  int r = -1;
  for (int i = 0; i < 2; ++i) {
    if (std::abs(e.rho - kPlacementRhos[i]) < 1e-9) r = i;
  }
  if (r < 0) throw InputError("placement ablation supports rho 0.95 and 0.8 only, got " + std::to_string(e.rho));
  int m = -1;
  for (int i = 0; i < 3; ++i) {
    if (e.placement == kPlacementModes[i]) m = i;
  }
  if (m < 0) throw InputError("placement ablation supports dense, random and sparse placement only");
  return m * 2 + r;
}

std::string csv_number(double v) {
  std::ostringstream s;
  s.precision(10);
  s << v;
  return s.str();
}

}  // namespace

AblationTable ablation_table(const std::vector<AblationEntry>& entries, AblationKind kind) {
  AblationTable table;
  table.kind = kind;
  if (kind == AblationKind::kComponents) {
    // neither, token only, parameter only, both
    for (int cell = 0; cell < 4; ++cell) table.rows.push_back({components_label(cell & 1, cell & 2), {}});
  } else {
    for (auto mode : kPlacementModes) {
      for (double rho : kPlacementRhos) table.rows.push_back({to_string(mode) + "@" + rho_label(rho), {}});
    }
  }
  for (const auto& e : entries) {
    auto& row = table.rows[static_cast<std::size_t>(cell_of(e, kind))];
    if (row.entry) throw InputError("duplicate ablation configuration '" + row.configuration + "'");
    row.entry = e;
  }
  return table;
}

std::string AblationTable::to_csv() const {
  std::ostringstream out;
  out << "configuration,token_selection,param_selection,placement,rho,mean_accuracy,seed_accuracies,"
         "trainable_fraction,flops_reduction,status\n";
  for (const auto& row : rows) {
    out << row.configuration << ',';
    if (!row.entry) {
      out << ",,,,,,,,absent\n";
      continue;
    }
    const auto& e = *row.entry;
    std::string seeds;
    for (std::size_t i = 0; i < e.accuracies.size(); ++i) seeds += (i ? ";" : "") + csv_number(e.accuracies[i]);
    const bool placement = kind == AblationKind::kPlacement;
    out << (e.token_selection ? 1 : 0) << ',' << (e.param_selection ? 1 : 0) << ','
        << (placement ? to_string(e.placement) : "") << ',' << (placement ? rho_label(e.rho) : "") << ','
        << csv_number(e.mean_accuracy()) << ',' << seeds << ',' << csv_number(e.trainable_fraction) << ','
        << csv_number(e.flops_reduction) << ",present\n";
  }
  return out.str();
}

json AblationTable::to_json() const {
  json rows_json = json::array();
  for (const auto& row : rows) {
    json r = {{"configuration", row.configuration}, {"status", row.entry ? "present" : "absent"}};
    if (row.entry) {
      const auto& e = *row.entry;
      r["token_selection"] = e.token_selection;
      r["param_selection"] = e.param_selection;
      if (kind == AblationKind::kPlacement) {
        r["placement"] = to_string(e.placement);
        r["rho"] = e.rho;
      }
      r["mean_accuracy"] = e.mean_accuracy();
      r["seed_accuracies"] = e.accuracies;
      r["trainable_fraction"] = e.trainable_fraction;
      r["flops_reduction"] = e.flops_reduction;
    }
    rows_json.push_back(r);
  }
  return {{"kind", kind == AblationKind::kComponents ? "components" : "placement"}, {"rows", rows_json}};
}

std::string matrix_to_csv(const std::vector<std::string>& labels, const std::vector<std::vector<double>>& m) {
  std::ostringstream out;
  out << "task";
  for (const auto& l : labels) out << ',' << l;
  out << '\n';
  for (std::size_t i = 0; i < m.size(); ++i) {
    out << (i < labels.size() ? labels[i] : std::to_string(i));
    for (double v : m[i]) out << ',' << csv_number(v);
    out << '\n';
  }
  return out.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

void write_json(const std::filesystem::path& path, const json& value) { write_text(path, value.dump(2) + "\n"); }

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw InputError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

}  // namespace trpts
