// Copyright 2026 The TR-PTS Authors
// SPDX-License-Identifier: Apache-2.0

#include "trpts/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>

#include "trpts/error.hpp"
#include "trpts/rng.hpp"

namespace trpts {

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::kAdam ? "adam" : "sgd"; }

OptimizerKind parse_optimizer(std::string_view text) {
  if (text == "adam") return OptimizerKind::kAdam;
  if (text == "sgd") return OptimizerKind::kSgd;
  throw ConfigError("unknown optimizer '" + std::string(text) + "' (expected adam|sgd)");
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  if (final_learning_rate < 0.0) throw ConfigError("final learning rate must be non-negative");
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (batch_size < 1) throw ConfigError("batch size must be at least 1");
  if (warmup_steps < 0) throw ConfigError("warmup steps must be non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("adam betas must lie in [0,1)");
  }
  if (!(epsilon > 0.0)) throw ConfigError("adam epsilon must be positive");
  if (weight_decay < 0.0) throw ConfigError("weight decay must be non-negative");
}

double cosine_learning_rate(const TrainConfig& config, std::int64_t step, std::int64_t total_steps) {
  if (step < config.warmup_steps) {
    return config.learning_rate * static_cast<double>(step + 1) / static_cast<double>(config.warmup_steps);
  }
  const auto span = std::max<std::int64_t>(1, total_steps - config.warmup_steps - 1);
  const double progress = std::min(1.0, static_cast<double>(step - config.warmup_steps) / static_cast<double>(span));
  return config.final_learning_rate + 0.5 * (config.learning_rate - config.final_learning_rate) *
                                          (1.0 + std::cos(std::numbers::pi * progress));
}

template <typename S>
TrainState<S> TrainState<S>::start(ParameterRegistry<S>& params, SelectionMask mask) {
  require_congruent(params.layout(), mask.layout, "training mask");
  TrainState state;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& bits = mask.bits[i];
    const bool any = std::any_of(bits.begin(), bits.end(), [](std::uint8_t b) { return b != 0; });
    params[i].tensor.set_requires_grad(any);
    state.first_moment.emplace_back(bits.size(), S(0));
    state.second_moment.emplace_back(bits.size(), S(0));
  }
  state.mask = std::move(mask);
  return state;
}

template <typename S>
void apply_masked_update(ParameterRegistry<S>& params, TrainState<S>& state, const TrainConfig& config,
                         double learning_rate) {
  ++state.step;
  const S lr = static_cast<S>(learning_rate);
  const S wd = static_cast<S>(config.weight_decay);
  const S b1 = static_cast<S>(config.beta1), b2 = static_cast<S>(config.beta2);
  const S eps = static_cast<S>(config.epsilon);
  const double t = static_cast<double>(state.step);
  const S c1 = static_cast<S>(1.0 / (1.0 - std::pow(config.beta1, t)));
  const S c2 = static_cast<S>(1.0 / (1.0 - std::pow(config.beta2, t)));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& tensor = params[i].tensor;
    // Without a gradient the masked gradient is zero: moments and values keep.
    if (!tensor.requires_grad() || !tensor.has_grad()) continue;
    const auto& bits = state.mask.bits[i];
    auto theta = tensor.mutable_data();
    const auto grad = tensor.grad();
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    for (std::size_t j = 0; j < theta.size(); ++j) {
      const S keep = static_cast<S>(bits[j]);
      const S g = grad[j] * keep;
      if (config.optimizer == OptimizerKind::kSgd) {
        theta[j] -= lr * (g + wd * theta[j] * keep);
        continue;
      }
      m[j] = b1 * m[j] + (S(1) - b1) * g;
      v[j] = b2 * v[j] + (S(1) - b2) * g * g;
      const S step = (m[j] * c1) / (std::sqrt(v[j] * c2) + eps) + wd * theta[j] * keep;
      theta[j] -= lr * step;
    }
  }
}

template <typename S>
StepResult masked_step(ViTModel<S>& model, TrainState<S>& state, const Batch& batch,
                       const RefinePlan* plan, const TrainConfig& config, std::int64_t total_steps) {
  auto& params = model.parameters();
  params.zero_grad();
  const auto trace = model.forward(batch.images, batch.size(), plan);
  const auto loss = cross_entropy(trace.logits, std::span<const std::int64_t>(batch.labels));
  StepResult result;
  result.loss = static_cast<double>(loss.item());
  if (!std::isfinite(result.loss)) {
    throw NumericError("non-finite loss at training step " + std::to_string(state.step));
  }
  result.learning_rate = cosine_learning_rate(config, state.step, total_steps);
  if (loss.requires_grad()) backward(loss);
  apply_masked_update(params, state, config, result.learning_rate);
  return result;
}

template <typename S>
FineTuneResult<S> fine_tune(ViTModel<S>& model, const SelectionMask& mask, const RefinePlan* plan,
                            const Dataset& train, const Dataset& val, const TrainConfig& config,
                            const EpochCallback& on_epoch) {
  config.validate();
  if (train.size() == 0 || val.size() == 0) throw InputError("fine-tuning needs nonempty train and val sets");
  if (plan) plan->validate(model.config().num_layers);
  FineTuneResult<S> result;
  result.state = TrainState<S>::start(model.parameters(), mask);
  const std::int64_t per_epoch = (train.size() + config.batch_size - 1) / config.batch_size;
  const std::int64_t total = per_epoch * config.epochs;
  auto rng = substream(config.seed, config.batching_stream);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    double loss_sum = 0.0;
    EpochMetrics metrics;
    metrics.epoch = epoch + 1;
    for (const auto& indices : shuffled_batches(train.size(), config.batch_size, rng)) {
      const auto batch = make_batch(train, indices);
      const auto step = masked_step(model, result.state, batch, plan, config, total);
      loss_sum += step.loss * static_cast<double>(batch.size());
      metrics.learning_rate = step.learning_rate;
    }
    model.parameters().zero_grad();
    metrics.train_loss = loss_sum / static_cast<double>(train.size());
    metrics.val_accuracy =
        config.evaluate_every_epoch ? evaluate(model, plan, val) : std::numeric_limits<double>::quiet_NaN();
    result.history.push_back(metrics);
    if (on_epoch) on_epoch(metrics);
  }
  return result;
}

template <typename S>
std::vector<std::int64_t> predict(const ViTModel<S>& model, const RefinePlan* plan, const Dataset& data,
                                  std::int64_t batch_size) {
  if (batch_size < 1) throw ConfigError("batch size must be at least 1");
  NoGradGuard no_grad;
  std::vector<std::int64_t> out;
  out.reserve(static_cast<std::size_t>(data.size()));
  std::vector<std::int64_t> indices;
  for (std::int64_t start = 0; start < data.size(); start += batch_size) {
    indices.clear();
    for (std::int64_t i = start; i < std::min(data.size(), start + batch_size); ++i) indices.push_back(i);
    const auto batch = make_batch(data, indices);
    const auto trace = model.forward(batch.images, batch.size(), plan);
    const auto pred = argmax_rows(trace.logits);
    out.insert(out.end(), pred.begin(), pred.end());
  }
  return out;
}

template <typename S>
double evaluate(const ViTModel<S>& model, const RefinePlan* plan, const Dataset& data,
                std::int64_t batch_size) {
  if (data.size() == 0) throw InputError("cannot evaluate on an empty dataset");
  const auto pred = predict(model, plan, data, batch_size);
  std::int64_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == data.labels[i];
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

SelectionMask full_mask(const ParamLayout& layout) {
  auto mask = SelectionMask::zeros(layout);
  for (auto& b : mask.bits) std::fill(b.begin(), b.end(), std::uint8_t{1});
  return mask;
}

SelectionMask pattern_mask(const ParamLayout& layout, const std::vector<std::string>& patterns) {
  auto mask = SelectionMask::zeros(layout);
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (matches_any(patterns, layout[i].name)) std::fill(mask.bits[i].begin(), mask.bits[i].end(), std::uint8_t{1});
  }
  return mask;
}

void write_metrics_csv(const std::filesystem::path& path, const std::vector<EpochMetrics>& history) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out.precision(17);
  out << "epoch,train_loss,val_accuracy,lr\n";
  for (const auto& m : history) {
    out << m.epoch << ',' << m.train_loss << ',' << m.val_accuracy << ',' << m.learning_rate << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

namespace {

constexpr const char* kConfigEntry = "__config__";

std::vector<std::int64_t> encode_config(const ModelConfig& c) {
  return {c.image_height, c.image_width, c.channels, c.patch_size, c.embed_dim, c.num_layers,
          c.num_heads,    c.mlp_ratio,   c.num_classes, static_cast<std::int64_t>(c.seed)};
}

ModelConfig decode_config(const std::vector<std::int64_t>& v) {
  if (v.size() != 10) throw InputError("checkpoint config entry has " + std::to_string(v.size()) + " fields");
  ModelConfig c;
  c.image_height = static_cast<int>(v[0]);
  c.image_width = static_cast<int>(v[1]);
  c.channels = static_cast<int>(v[2]);
  c.patch_size = static_cast<int>(v[3]);
  c.embed_dim = static_cast<int>(v[4]);
  c.num_layers = static_cast<int>(v[5]);
  c.num_heads = static_cast<int>(v[6]);
  c.mlp_ratio = static_cast<int>(v[7]);
  c.num_classes = static_cast<int>(v[8]);
  c.seed = static_cast<std::uint64_t>(v[9]);
  c.validate();
  return c;
}

}  // namespace

TensorPack model_to_pack(const ViTModel<float>& model) {
  TensorPack pack;
  const auto config = encode_config(model.config());
  pack.add_i64(kConfigEntry, {config.size()}, config);
  for (const auto& p : model.parameters()) {
    pack.add_f32(p.info.name, {p.info.shape.begin(), p.info.shape.end()}, p.tensor.data());
  }
  return pack;
}

ViTModel<float> model_from_pack(const TensorPack& pack) {
  ViTModel<float> model(decode_config(pack.i64(kConfigEntry)));
  for (auto& p : model.parameters()) {
    const auto& entry = pack.entry(p.info.name);
    if (!std::equal(entry.dims.begin(), entry.dims.end(), p.info.shape.begin(), p.info.shape.end())) {
      throw InputError("checkpoint entry '" + p.info.name + "' has the wrong shape");
    }
    const auto values = pack.f32(p.info.name);
    std::copy(values.begin(), values.end(), p.tensor.mutable_data().begin());
  }
  return model;
}

void save_checkpoint(const ViTModel<float>& model, const std::filesystem::path& path) {
  model_to_pack(model).write(path);
}

ViTModel<float> load_checkpoint(const std::filesystem::path& path) {
  return model_from_pack(TensorPack::read(path));
}

#define TRPTS_INSTANTIATE(S)                                                                          \
  template struct TrainState<S>;                                                                      \
  template void apply_masked_update<S>(ParameterRegistry<S>&, TrainState<S>&, const TrainConfig&,     \
                                       double);                                                       \
  template StepResult masked_step<S>(ViTModel<S>&, TrainState<S>&, const Batch&, const RefinePlan*,   \
                                     const TrainConfig&, std::int64_t);                               \
  template FineTuneResult<S> fine_tune<S>(ViTModel<S>&, const SelectionMask&, const RefinePlan*,      \
                                          const Dataset&, const Dataset&, const TrainConfig&,         \
                                          const EpochCallback&);                                      \
  template double evaluate<S>(const ViTModel<S>&, const RefinePlan*, const Dataset&, std::int64_t);   \
  template std::vector<std::int64_t> predict<S>(const ViTModel<S>&, const RefinePlan*, const Dataset&, \
                                                std::int64_t);

TRPTS_INSTANTIATE(float)
TRPTS_INSTANTIATE(double)

}  // namespace trpts
