// Copyright 2026 The TR-PTS Authors
// SPDX-License-Identifier: Apache-2.0

#include "trpts/selector.hpp"

#include <fnmatch.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "trpts/error.hpp"

namespace trpts {

void SelectorConfig::validate() const {
  if (!(top_m_percent > 0.0 && top_m_percent <= 100.0)) {
    throw ConfigError("top-M percent must lie in (0,100], got " + std::to_string(top_m_percent));
  }
  if (c_min < 1) throw ConfigError("c_min must be at least 1, got " + std::to_string(c_min));
}

bool glob_match(std::string_view pattern, std::string_view text) {
  return ::fnmatch(std::string(pattern).c_str(), std::string(text).c_str(), 0) == 0;
}

bool matches_any(const std::vector<std::string>& patterns, const std::string& name) {
  return std::any_of(patterns.begin(), patterns.end(),
                     [&](const std::string& p) { return glob_match(p, name); });
}

std::vector<ParamIndex> top_m_set(const FisherScores& scores, const SelectorConfig& config) {
  config.validate();
  std::vector<std::uint32_t> scoped;
  for (std::uint32_t i = 0; i < scores.layout.size(); ++i) {
    if (matches_any(config.scope, scores.layout[i].name)) scoped.push_back(i);
  }
  if (scoped.empty()) throw ConfigError("selection scope matches no parameter");
  // rank = position in lexicographic name order, the first tie-breaker
  std::sort(scoped.begin(), scoped.end(), [&](auto a, auto b) {
    return scores.layout[a].name < scores.layout[b].name;
  });

  struct Candidate {
    double score;
    std::uint32_t rank;
    std::uint32_t param;
    std::uint64_t offset;
  };
  std::vector<Candidate> all;
  for (std::uint32_t r = 0; r < scoped.size(); ++r) {
    const auto& v = scores.values[scoped[r]];
    for (std::uint64_t j = 0; j < v.size(); ++j) all.push_back({v[j], r, scoped[r], j});
  }
  const auto total = static_cast<double>(all.size());
  auto k = static_cast<std::size_t>(std::ceil(config.top_m_percent / 100.0 * total - 1e-9));
  k = std::clamp<std::size_t>(k, 1, all.size());

  auto better = [](const Candidate& a, const Candidate& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.rank != b.rank) return a.rank < b.rank;
    return a.offset < b.offset;
  };
  std::nth_element(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k - 1), all.end(), better);
  all.resize(k);
  std::sort(all.begin(), all.end(), [](const Candidate& a, const Candidate& b) {
    return a.rank != b.rank ? a.rank < b.rank : a.offset < b.offset;
  });
  std::vector<ParamIndex> out;
  out.reserve(k);
  for (const auto& c : all) out.push_back({c.param, c.offset});
  return out;
}

LayerImportance layer_weights(std::span<const ParamIndex> top_set, const ParamLayout& layout,
                              int num_layers) {
  LayerImportance importance;
  importance.counts.assign(static_cast<std::size_t>(num_layers), 0);
  importance.top_m_size = static_cast<std::int64_t>(top_set.size());
  for (const auto& idx : top_set) {
    const int layer = layout.at(idx.param).layer;
    if (layer >= 0 && layer < num_layers) {
      ++importance.counts[static_cast<std::size_t>(layer)];
    } else {
      ++importance.non_block_count;
    }
  }
  importance.w.resize(importance.counts.size(), 0.0);
  if (importance.top_m_size > 0) {
    for (std::size_t l = 0; l < importance.counts.size(); ++l) {
      importance.w[l] = static_cast<double>(importance.counts[l]) /
                        static_cast<double>(importance.top_m_size);
    }
  }
  return importance;
}

ConnectionBudget connection_budget(std::span<const double> w, int c_min,
                                   std::span<const std::int64_t> fan_in_cap) {
  if (c_min < 1) throw ConfigError("c_min must be at least 1");
  double min_positive = 0.0;
  for (double v : w) {
    if (v > 0.0 && (min_positive == 0.0 || v < min_positive)) min_positive = v;
  }
  if (min_positive == 0.0) throw ConfigError("connection budget needs at least one positive layer weight");
  ConnectionBudget budget;
  for (std::size_t l = 0; l < w.size(); ++l) {
    std::int64_t c = 1;
    if (w[l] > 0.0) {
      // the relative nudge keeps exact ratios such as 0.6/0.4*2 at 3
      const double raw = w[l] / min_positive * static_cast<double>(c_min);
      c = std::max<std::int64_t>(1, static_cast<std::int64_t>(std::floor(raw * (1.0 + 1e-12))));
    }
    if (l < fan_in_cap.size() && fan_in_cap[l] > 0) c = std::max<std::int64_t>(1, std::min(c, fan_in_cap[l]));
    budget.c.push_back(c);
  }
  return budget;
}

std::vector<std::int64_t> eligible_fan_in(const ParamLayout& layout, const SelectorConfig& config,
                                          int num_layers) {
  std::vector<std::int64_t> cap(static_cast<std::size_t>(num_layers), 0);
  for (const auto& p : layout) {
    if (p.layer < 0 || p.layer >= num_layers || p.shape.size() != 2) continue;
    if (!matches_any(config.scope, p.name)) continue;
    cap[static_cast<std::size_t>(p.layer)] = std::max(cap[static_cast<std::size_t>(p.layer)], p.shape[1]);
  }
  return cap;
}

SelectionMask SelectionMask::zeros(const ParamLayout& layout) {
  SelectionMask mask;
  mask.layout = layout;
  for (const auto& p : layout) mask.bits.emplace_back(static_cast<std::size_t>(p.numel()), 0);
  return mask;
}

std::int64_t SelectionMask::selected() const {
  std::int64_t n = 0;
  for (const auto& b : bits) n += std::count(b.begin(), b.end(), std::uint8_t{1});
  return n;
}

double SelectionMask::trainable_fraction() const {
  const auto t = total();
  return t == 0 ? 0.0 : static_cast<double>(selected()) / static_cast<double>(t);
}

std::vector<std::int64_t> SelectionMask::selected_per_layer(int num_layers) const {
  std::vector<std::int64_t> out(static_cast<std::size_t>(num_layers), 0);
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const int l = layout[i].layer;
    if (l >= 0 && l < num_layers) {
      out[static_cast<std::size_t>(l)] += std::count(bits[i].begin(), bits[i].end(), std::uint8_t{1});
    }
  }
  return out;
}

TensorPack SelectionMask::to_pack() const {
  TensorPack pack;
  for (std::size_t i = 0; i < layout.size(); ++i) {
    pack.add_u8(layout[i].name, {layout[i].shape.begin(), layout[i].shape.end()}, bits[i]);
  }
  return pack;
}

SelectionMask SelectionMask::from_pack(const TensorPack& pack, const ParamLayout& layout) {
  SelectionMask mask;
  mask.layout = layout;
  for (const auto& p : layout) {
    auto b = pack.u8(p.name);
    if (static_cast<std::int64_t>(b.size()) != p.numel()) {
      throw InputError("mask entry '" + p.name + "' does not match the parameter shape");
    }
    for (auto v : b) {
      if (v > 1) throw InputError("mask entry '" + p.name + "' holds a value other than 0/1");
    }
    mask.bits.push_back(std::move(b));
  }
  return mask;
}

SelectionMask select_per_neuron(const FisherScores& scores, const ConnectionBudget& budget,
                                const SelectorConfig& config) {
  auto mask = SelectionMask::zeros(scores.layout);
  std::vector<std::int64_t> order;
  for (std::size_t i = 0; i < scores.layout.size(); ++i) {
    const auto& p = scores.layout[i];
    auto& bits = mask.bits[i];
    if (matches_any(config.always_trainable, p.name)) {
      std::fill(bits.begin(), bits.end(), std::uint8_t{1});
      continue;
    }
    if (!matches_any(config.scope, p.name)) continue;
    if (p.shape.size() != 2 || p.layer < 0) {
      throw ConfigError("scoped parameter '" + p.name + "' is not a transformer-block weight matrix");
    }
    if (static_cast<std::size_t>(p.layer) >= budget.c.size()) {
      throw ConfigError("no connection budget for layer " + std::to_string(p.layer));
    }
    const std::int64_t rows = p.shape[0], fan_in = p.shape[1];
    const std::int64_t keep = std::min(budget.c[static_cast<std::size_t>(p.layer)], fan_in);
    const auto& v = scores.values[i];
    order.resize(static_cast<std::size_t>(fan_in));
    for (std::int64_t r = 0; r < rows; ++r) {
      const double* row = v.data() + r * fan_in;
      std::iota(order.begin(), order.end(), 0);
      std::nth_element(order.begin(), order.begin() + (keep - 1), order.end(), [&](auto a, auto b) {
        return row[a] != row[b] ? row[a] > row[b] : a < b;
      });
      for (std::int64_t j = 0; j < keep; ++j) bits[static_cast<std::size_t>(r * fan_in + order[j])] = 1;
    }
  }
  return mask;
}

double mask_overlap(const SelectionMask& a, const SelectionMask& b) {
  require_congruent(a.layout, b.layout, "mask_overlap");
  std::int64_t both = 0, either = 0;
  for (std::size_t i = 0; i < a.bits.size(); ++i) {
    for (std::size_t j = 0; j < a.bits[i].size(); ++j) {
      both += a.bits[i][j] & b.bits[i][j];
      either += a.bits[i][j] | b.bits[i][j];
    }
  }
  return either == 0 ? 1.0 : static_cast<double>(both) / static_cast<double>(either);
}

SelectionResult select_parameters(const FisherScores& scores, const SelectorConfig& config,
                                  int num_layers) {
  SelectionResult result;
  result.top_set = top_m_set(scores, config);
  result.importance = layer_weights(result.top_set, scores.layout, num_layers);
  const auto cap = eligible_fan_in(scores.layout, config, num_layers);
  result.budget = connection_budget(result.importance.w, config.c_min, cap);
  result.mask = select_per_neuron(scores, result.budget, config);
  return result;
}

}  // namespace trpts
