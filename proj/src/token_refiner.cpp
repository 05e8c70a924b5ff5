// Copyright 2026 The TR-PTS Authors
// SPDX-License-Identifier: Apache-2.0

#include "trpts/token_refiner.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "trpts/error.hpp"
#include "trpts/rng.hpp"

namespace trpts {

std::string to_string(PlacementMode mode) {
  switch (mode) {
    case PlacementMode::kSparse: return "sparse";
    case PlacementMode::kDense: return "dense";
    case PlacementMode::kRandom: return "random";
    case PlacementMode::kExplicit: return "explicit";
  }
  return "explicit";
}

PlacementMode parse_placement_mode(std::string_view text) {
  if (text == "sparse") return PlacementMode::kSparse;
  if (text == "dense") return PlacementMode::kDense;
  if (text == "random") return PlacementMode::kRandom;
  if (text == "explicit") return PlacementMode::kExplicit;
  throw ConfigError("unknown placement mode '" + std::string(text) +
                    "' (expected sparse|dense|random|explicit)");
}

void RefinePlan::validate(int num_layers) const {
  if (!(rho > 0.0 && rho <= 1.0)) {
    throw ConfigError("select rate rho must lie in (0,1], got " + std::to_string(rho));
  }
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i] < 0 || layers[i] >= num_layers) {
      throw ConfigError("refine layer " + std::to_string(layers[i]) + " outside [0," +
                        std::to_string(num_layers) + ")");
    }
    if (i > 0 && layers[i] <= layers[i - 1]) {
      throw ConfigError("refine layers must be strictly increasing");
    }
  }
}

bool RefinePlan::refines(int layer) const {
  return std::binary_search(layers.begin(), layers.end(), layer);
}

std::int64_t kept_count(double rho, std::int64_t n) {
  const auto kept = static_cast<std::int64_t>(std::floor(rho * static_cast<double>(n) + 1e-9));
  if (kept < 1) {
    throw ConfigError("select rate " + std::to_string(rho) + " keeps no token out of " +
                      std::to_string(n));
  }
  return std::min(kept, n);
}

std::int64_t refined_token_count(std::int64_t tokens, double rho) {
  const std::int64_t n = tokens - 1;
  const std::int64_t kept = kept_count(rho, n);
  return kept == n ? tokens : 1 + kept + 1;
}

template <typename S>
std::vector<S> cls_attention_scores(std::span<const S> attention, int heads, std::int64_t tokens) {
  if (static_cast<std::int64_t>(attention.size()) != heads * tokens * tokens) {
    throw DimensionError("cls_attention_scores: attention size does not match heads x tokens^2");
  }
  std::vector<S> scores(static_cast<std::size_t>(tokens - 1), S(0));
  for (int h = 0; h < heads; ++h) {
    const S* row = attention.data() + static_cast<std::int64_t>(h) * tokens * tokens;
    for (std::int64_t j = 1; j < tokens; ++j) scores[j - 1] += row[j];
  }
  for (auto& s : scores) s /= S(heads);
  return scores;
}

template <typename S>
std::vector<std::int64_t> select_tokens(std::span<const S> scores, double rho) {
  const auto n = static_cast<std::int64_t>(scores.size());
  const std::int64_t k = kept_count(rho, n);
  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::int64_t a, std::int64_t b) { return scores[a] > scores[b]; });
  order.resize(static_cast<std::size_t>(k));
  std::sort(order.begin(), order.end());
  return order;
}

template <typename S>
std::vector<S> merge_weights(std::span<const S> scores, std::span<const std::int64_t> discarded) {
  std::vector<S> weights(scores.size(), S(0));
  if (discarded.empty()) return weights;
  S mass = S(0);
  for (auto i : discarded) mass += scores[i];
  if (mass < S(1e-12)) {
    for (auto i : discarded) weights[i] = S(1) / S(discarded.size());
  } else {
    for (auto i : discarded) weights[i] = scores[i] / mass;
  }
  return weights;
}

template <typename S>
Tensor<S> merge_tokens(std::span<const S> scores, const Tensor<S>& hidden,
                       std::span<const std::int64_t> discarded) {
  if (discarded.empty()) throw UsageError("merge_tokens: nothing to merge");
  if (hidden.rank() != 2 || hidden.dim(0) != static_cast<std::int64_t>(scores.size())) {
    throw DimensionError("merge_tokens: hidden " + shape_str(hidden.shape()) + " vs " +
                         std::to_string(scores.size()) + " scores");
  }
  return weighted_row_sum(hidden, {merge_weights(scores, discarded)});
}

template <typename S>
RefineDecision<S> decide_refinement(std::span<const S> scores, double rho) {
  RefineDecision<S> decision;
  decision.kept = select_tokens(scores, rho);
  std::vector<bool> is_kept(scores.size(), false);
  for (auto i : decision.kept) is_kept[i] = true;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!is_kept[i]) decision.discarded.push_back(static_cast<std::int64_t>(i));
  }
  decision.weights = merge_weights(scores, std::span<const std::int64_t>(decision.discarded));
  return decision;
}

template <typename S>
Tensor<S> refine(const Tensor<S>& hidden, std::span<const S> scores, double rho) {
  if (hidden.rank() != 2) throw DimensionError("refine: expected [1+N, d], got " + shape_str(hidden.shape()));
  const auto batched = reshape(hidden, {1, hidden.dim(0), hidden.dim(1)});
  std::vector<std::vector<S>> per_batch{std::vector<S>(scores.begin(), scores.end())};
  const auto out = refine_batch(batched, per_batch, rho);
  if (out.node() == batched.node()) return hidden;
  return reshape(out, {out.dim(1), out.dim(2)});
}

template <typename S>
Tensor<S> refine_batch(const Tensor<S>& hidden, const std::vector<std::vector<S>>& scores,
                       double rho, std::vector<RefineDecision<S>>* decisions) {
  if (hidden.rank() != 3) {
    throw DimensionError("refine_batch: expected [B, 1+N, d], got " + shape_str(hidden.shape()));
  }
  const std::int64_t batch = hidden.dim(0), n = hidden.dim(1) - 1;
  if (static_cast<std::int64_t>(scores.size()) != batch) {
    throw DimensionError("refine_batch: score lists do not match batch size");
  }
  const std::int64_t k = kept_count(rho, n);
  if (decisions) decisions->clear();
  if (k == n) return hidden;
  std::vector<std::vector<std::int64_t>> rows(static_cast<std::size_t>(batch));
  std::vector<std::vector<S>> weights(static_cast<std::size_t>(batch));
  for (std::int64_t b = 0; b < batch; ++b) {
    if (static_cast<std::int64_t>(scores[b].size()) != n) {
      throw DimensionError("refine_batch: expected " + std::to_string(n) + " scores per sample");
    }
    auto decision = decide_refinement(std::span<const S>(scores[b]), rho);
    rows[b].reserve(static_cast<std::size_t>(k + 1));
    rows[b].push_back(0);
    for (auto i : decision.kept) rows[b].push_back(i + 1);
    // shift to hidden-row coordinates: row 0 is [CLS]
    weights[b].assign(static_cast<std::size_t>(n + 1), S(0));
    std::copy(decision.weights.begin(), decision.weights.end(), weights[b].begin() + 1);
    if (decisions) decisions->push_back(std::move(decision));
  }
  return concat_rows(gather_rows(hidden, rows), weighted_row_sum(hidden, weights));
}

RefinePlan plan_refining_layers(std::span<const double> layer_weights, int num_refine_layers,
                                PlacementMode mode, double rho, std::uint64_t seed,
                                std::span<const int> explicit_layers) {
  const int num_layers = static_cast<int>(layer_weights.size());
  RefinePlan plan;
  plan.rho = rho;
  plan.mode = mode;
  if (mode == PlacementMode::kExplicit) {
    plan.layers.assign(explicit_layers.begin(), explicit_layers.end());
    plan.validate(num_layers);
    return plan;
  }
  if (num_refine_layers < 0 || num_refine_layers >= num_layers) {
    throw ConfigError("number of refining layers must be in [0," + std::to_string(num_layers) +
                      "), got " + std::to_string(num_refine_layers));
  }
  std::vector<int> eligible;
  for (int l = 1; l < num_layers; ++l) eligible.push_back(l);
  switch (mode) {
    case PlacementMode::kSparse:
      // smallest weight first; ties go to the deeper layer
      std::sort(eligible.begin(), eligible.end(), [&](int a, int b) {
        if (layer_weights[a] != layer_weights[b]) return layer_weights[a] < layer_weights[b];
        return a > b;
      });
      break;
    case PlacementMode::kDense:
      std::sort(eligible.begin(), eligible.end(), [&](int a, int b) {
        if (layer_weights[a] != layer_weights[b]) return layer_weights[a] > layer_weights[b];
        return a > b;
      });
      break;
    case PlacementMode::kRandom: {
      auto rng = substream(seed, "plan");
      shuffle(eligible.begin(), eligible.end(), rng);
      break;
    }
    case PlacementMode::kExplicit:
      break;
  }
  plan.layers.assign(eligible.begin(), eligible.begin() + num_refine_layers);
  std::sort(plan.layers.begin(), plan.layers.end());
  plan.validate(num_layers);
  return plan;
}

#define TRPTS_INSTANTIATE(S)                                                                    \
  template std::vector<S> cls_attention_scores<S>(std::span<const S>, int, std::int64_t);       \
  template std::vector<std::int64_t> select_tokens<S>(std::span<const S>, double);              \
  template std::vector<S> merge_weights<S>(std::span<const S>, std::span<const std::int64_t>);  \
  template Tensor<S> merge_tokens<S>(std::span<const S>, const Tensor<S>&,                      \
                                     std::span<const std::int64_t>);                            \
  template RefineDecision<S> decide_refinement<S>(std::span<const S>, double);                  \
  template Tensor<S> refine<S>(const Tensor<S>&, std::span<const S>, double);                   \
  template Tensor<S> refine_batch<S>(const Tensor<S>&, const std::vector<std::vector<S>>&,      \
                                     double, std::vector<RefineDecision<S>>*);

TRPTS_INSTANTIATE(float)
TRPTS_INSTANTIATE(double)

#undef TRPTS_INSTANTIATE

}  // namespace trpts
