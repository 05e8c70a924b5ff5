// Copyright 2026 The TR-PTS Authors
// SPDX-License-Identifier: Apache-2.0

#include "trpts/fisher.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "trpts/error.hpp"
#include "trpts/rng.hpp"

namespace trpts {

FisherScores FisherScores::zeros(const ParamLayout& layout) {
  FisherScores scores;
  scores.layout = layout;
  for (const auto& p : layout) scores.values.emplace_back(static_cast<std::size_t>(p.numel()), 0.0);
  return scores;
}

double FisherScores::min_value() const {
  double lo = std::numeric_limits<double>::infinity();
  for (const auto& v : values) {
    for (double x : v) lo = std::min(lo, x);
  }
  return lo;
}

FisherScores FisherScores::scaled(double factor) const {
  FisherScores out = *this;
  for (auto& v : out.values) {
    for (auto& x : v) x *= factor;
  }
  return out;
}

TensorPack FisherScores::to_pack() const {
  TensorPack pack;
  for (std::size_t i = 0; i < layout.size(); ++i) {
    std::vector<std::uint64_t> dims(layout[i].shape.begin(), layout[i].shape.end());
    pack.add_f64(layout[i].name, std::move(dims), values[i]);
  }
  pack.add_i64("sample_count", {}, std::span<const std::int64_t>(&sample_count, 1));
  pack.add_i64("batch_count", {}, std::span<const std::int64_t>(&batch_count, 1));
  return pack;
}

FisherScores FisherScores::from_pack(const TensorPack& pack, const ParamLayout& layout) {
  FisherScores scores;
  scores.layout = layout;
  for (const auto& p : layout) {
    const auto& entry = pack.entry(p.name);
    if (entry.count() != static_cast<std::uint64_t>(p.numel())) {
      throw InputError("fisher scores for '" + p.name + "' do not match the parameter shape");
    }
    scores.values.push_back(pack.f64(p.name));
  }
  scores.sample_count = pack.i64("sample_count").at(0);
  scores.batch_count = pack.i64("batch_count").at(0);
  return scores;
}

template <typename S>
FisherScores accumulate_fisher(ParameterRegistry<S>& params, const BatchLoss<S>& loss,
                               const std::vector<std::int64_t>& batch_sizes) {
  if (batch_sizes.empty()) throw InputError("fisher estimation needs at least one batch");
  auto scores = FisherScores::zeros(params.layout());
  for (std::size_t b = 0; b < batch_sizes.size(); ++b) {
    params.zero_grad();
    const auto value = loss(static_cast<std::int64_t>(b));
    if (!std::isfinite(static_cast<double>(value.item()))) {
      throw NumericError("non-finite loss in fisher batch " + std::to_string(b));
    }
    backward(value);
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& t = params[i].tensor;
      if (!t.has_grad()) continue;
      auto& acc = scores.values[i];
      const auto g = t.grad();
      for (std::size_t j = 0; j < g.size(); ++j) {
        const double gj = static_cast<double>(g[j]);
        if (!std::isfinite(gj)) {
          throw NumericError("non-finite gradient for parameter '" + params[i].info.name + "'");
        }
        acc[j] += gj * gj;
      }
    }
    scores.sample_count += batch_sizes[b];
  }
  params.zero_grad();
  scores.batch_count = static_cast<std::int64_t>(batch_sizes.size());
  const double inv = 1.0 / static_cast<double>(scores.batch_count);
  for (auto& v : scores.values) {
    for (auto& x : v) x *= inv;
  }
  return scores;
}

template <typename S>
FisherScores estimate_fim(ViTModel<S>& model, const Dataset& data, const FimOptions& options) {
  if (data.size() == 0) throw InputError("fisher estimation on an empty dataset");
  auto rng = substream(options.seed, "batching/score");
  auto batches = shuffled_batches(data.size(), options.batch_size, rng);
  if (options.num_batches > 0) {
    const auto wanted = static_cast<std::size_t>(options.num_batches);
    if (wanted * static_cast<std::size_t>(options.batch_size) > static_cast<std::size_t>(data.size()) &&
        !options.with_replacement) {
      throw ConfigError("fisher scoring asks for " + std::to_string(options.num_batches) + " batches of " +
                        std::to_string(options.batch_size) + " from " + std::to_string(data.size()) +
                        " examples without replacement");
    }
    // Sampling with replacement draws further shuffled passes.
    while (batches.size() < wanted) {
      auto more = shuffled_batches(data.size(), options.batch_size, rng);
      batches.insert(batches.end(), more.begin(), more.end());
    }
    batches.resize(wanted);
  }

  auto& params = model.parameters();
  std::vector<bool> previous;
  for (auto& p : params) {
    previous.push_back(p.tensor.requires_grad());
    p.tensor.set_requires_grad(true);
  }
  std::vector<std::int64_t> sizes;
  for (const auto& b : batches) sizes.push_back(static_cast<std::int64_t>(b.size()));
  const S multiplier = static_cast<S>(options.loss_multiplier);
  auto loss = [&](std::int64_t index) {
    const auto batch = make_batch(data, batches[static_cast<std::size_t>(index)]);
    auto trace = model.forward(batch.images, batch.size());
    auto ce = cross_entropy(trace.logits, std::span<const std::int64_t>(batch.labels));
    return multiplier == S(1) ? ce : scale(ce, multiplier);
  };
  FisherScores scores;
  try {
    scores = accumulate_fisher<S>(params, loss, sizes);
  } catch (...) {
    for (std::size_t i = 0; i < params.size(); ++i) params[i].tensor.set_requires_grad(previous[i]);
    throw;
  }
  for (std::size_t i = 0; i < params.size(); ++i) params[i].tensor.set_requires_grad(previous[i]);
  return scores;
}

FisherScores merge_scores(const FisherScores& a, const FisherScores& b) {
  if (a.empty()) return b;
  if (b.empty()) return a;
  require_congruent(a.layout, b.layout, "merge_scores");
  FisherScores out = FisherScores::zeros(a.layout);
  const double na = static_cast<double>(a.batch_count), nb = static_cast<double>(b.batch_count);
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    for (std::size_t j = 0; j < out.values[i].size(); ++j) {
      out.values[i][j] = (a.values[i][j] * na + b.values[i][j] * nb) / (na + nb);
    }
  }
  out.sample_count = a.sample_count + b.sample_count;
  out.batch_count = a.batch_count + b.batch_count;
  return out;
}

template FisherScores accumulate_fisher<float>(ParameterRegistry<float>&, const BatchLoss<float>&,
                                               const std::vector<std::int64_t>&);
template FisherScores accumulate_fisher<double>(ParameterRegistry<double>&, const BatchLoss<double>&,
                                                const std::vector<std::int64_t>&);
template FisherScores estimate_fim<float>(ViTModel<float>&, const Dataset&, const FimOptions&);
template FisherScores estimate_fim<double>(ViTModel<double>&, const Dataset&, const FimOptions&);

}  // namespace trpts
