// Copyright 2026 The TR-PTS Authors
// SPDX-License-Identifier: Apache-2.0

#include "trpts/vit.hpp"

#include <algorithm>
#include <cmath>

#include "trpts/error.hpp"
#include "trpts/rng.hpp"

namespace trpts {

void ModelConfig::validate() const {
  if (image_height <= 0 || image_width <= 0 || channels <= 0 || patch_size <= 0) {
    throw ConfigError("image dimensions and patch size must be positive");
  }
  if (image_height % patch_size != 0 || image_width % patch_size != 0) {
    throw ConfigError("image size " + std::to_string(image_height) + "x" + std::to_string(image_width) +
                      " is not divisible by patch size " + std::to_string(patch_size));
  }
  if (embed_dim <= 0 || num_heads <= 0 || embed_dim % num_heads != 0) {
    throw ConfigError("embed_dim " + std::to_string(embed_dim) + " is not divisible by " +
                      std::to_string(num_heads) + " heads");
  }
  if (num_layers <= 0 || mlp_ratio <= 0 || num_classes <= 0) {
    throw ConfigError("layers, mlp_ratio and num_classes must be positive");
  }
}

std::int64_t ModelConfig::num_patches() const {
  return std::int64_t{image_height / patch_size} * (image_width / patch_size);
}

namespace {

template <typename S>
void patchify_into(const float* image, const ModelConfig& c, S* out) {
  const int grid_w = c.image_width / c.patch_size;
  const std::int64_t patches = c.num_patches();
  std::int64_t o = 0;
  for (std::int64_t r = 0; r < patches; ++r) {
    const int py = static_cast<int>(r / grid_w), px = static_cast<int>(r % grid_w);
    for (int y = 0; y < c.patch_size; ++y) {
      const float* row = image + (std::int64_t{py * c.patch_size + y} * c.image_width +
                                  std::int64_t{px} * c.patch_size) * c.channels;
      for (int i = 0; i < c.patch_size * c.channels; ++i) out[o++] = static_cast<S>(row[i]);
    }
  }
}

template <typename S>
Tensor<S> init_weight(std::mt19937_64& rng, std::int64_t rows, std::int64_t cols) {
  std::vector<S> v(static_cast<std::size_t>(rows * cols));
  for (auto& x : v) x = static_cast<S>(truncated_normal(rng, 0.02));
  return Tensor<S>::from({rows, cols}, std::move(v));
}

}  // namespace

template <typename S>
Tensor<S> patchify(const Tensor<S>& image, const ModelConfig& config) {
  if (image.shape() != Shape{config.image_height, config.image_width, config.channels}) {
    throw InputError("patchify: image " + shape_str(image.shape()) + " does not match config [" +
                     std::to_string(config.image_height) + "," + std::to_string(config.image_width) +
                     "," + std::to_string(config.channels) + "]");
  }
  config.validate();
  std::vector<float> pixels(image.data().begin(), image.data().end());
  std::vector<S> out(static_cast<std::size_t>(config.num_patches() * config.patch_dim()));
  patchify_into(pixels.data(), config, out.data());
  return Tensor<S>::from({config.num_patches(), config.patch_dim()}, std::move(out));
}

template <typename S>
Tensor<S> patchify_batch(std::span<const float> images, std::int64_t batch, const ModelConfig& config) {
  if (static_cast<std::int64_t>(images.size()) != batch * config.image_numel()) {
    throw InputError("patchify: " + std::to_string(images.size()) + " pixels do not form " +
                     std::to_string(batch) + " images of the configured size");
  }
  const std::int64_t n = config.num_patches(), pd = config.patch_dim();
  std::vector<S> out(static_cast<std::size_t>(batch * n * pd));
  for (std::int64_t b = 0; b < batch; ++b) {
    patchify_into(images.data() + b * config.image_numel(), config, out.data() + b * n * pd);
  }
  return Tensor<S>::from({batch, n, pd}, std::move(out));
}

template <typename S>
ViTModel<S>::ViTModel(ModelConfig config) : config_(config) {
  config_.validate();
  build(config_.seed);
}

template <typename S>
ViTModel<S>::ViTModel(const ViTModel& other)
    : config_(other.config_),
      patch_w_(other.patch_w_), patch_b_(other.patch_b_), cls_(other.cls_), pos_(other.pos_),
      norm_gain_(other.norm_gain_), norm_bias_(other.norm_bias_),
      head_w_(other.head_w_), head_b_(other.head_b_), blocks_(other.blocks_) {
  for (const auto& param : other.params_) {
    params_.add(param.info.layer, param.info.name,
                Tensor<S>::from(param.tensor.shape(),
                                std::vector<S>(param.tensor.data().begin(), param.tensor.data().end()),
                                param.tensor.requires_grad()));
  }
}

template <typename S>
ViTModel<S>& ViTModel<S>::operator=(const ViTModel& other) {
  if (this != &other) *this = ViTModel(other);
  return *this;
}

template <typename S>
void ViTModel<S>::build(std::uint64_t seed) {
  auto rng = substream(seed, "init");
  const std::int64_t d = config_.embed_dim;
  const std::int64_t hidden = config_.mlp_hidden();
  auto weight = [&](int layer, const std::string& name, std::int64_t rows, std::int64_t cols) {
    params_.add(layer, name, init_weight<S>(rng, rows, cols));
    return params_.size() - 1;
  };
  auto constant = [&](int layer, const std::string& name, std::int64_t n, S value) {
    params_.add(layer, name, Tensor<S>::full({n}, value));
    return params_.size() - 1;
  };

  patch_w_ = weight(-1, "patch.weight", d, config_.patch_dim());
  patch_b_ = constant(-1, "patch.bias", d, S(0));
  cls_ = weight(-1, "cls", 1, d);
  pos_ = weight(-1, "pos", config_.num_patches() + 1, d);
  for (int l = 0; l < config_.num_layers; ++l) {
    const std::string prefix = "block" + std::to_string(l) + ".";
    BlockSlots b{};
    b.norm1_gain = constant(l, prefix + "norm1.gain", d, S(1));
    b.norm1_bias = constant(l, prefix + "norm1.bias", d, S(0));
    b.q_w = weight(l, prefix + "attn.q.weight", d, d);
    b.q_b = constant(l, prefix + "attn.q.bias", d, S(0));
    b.k_w = weight(l, prefix + "attn.k.weight", d, d);
    b.k_b = constant(l, prefix + "attn.k.bias", d, S(0));
    b.v_w = weight(l, prefix + "attn.v.weight", d, d);
    b.v_b = constant(l, prefix + "attn.v.bias", d, S(0));
    b.o_w = weight(l, prefix + "attn.o.weight", d, d);
    b.o_b = constant(l, prefix + "attn.o.bias", d, S(0));
    b.norm2_gain = constant(l, prefix + "norm2.gain", d, S(1));
    b.norm2_bias = constant(l, prefix + "norm2.bias", d, S(0));
    b.fc1_w = weight(l, prefix + "mlp.fc1.weight", hidden, d);
    b.fc1_b = constant(l, prefix + "mlp.fc1.bias", hidden, S(0));
    b.fc2_w = weight(l, prefix + "mlp.fc2.weight", d, hidden);
    b.fc2_b = constant(l, prefix + "mlp.fc2.bias", d, S(0));
    blocks_.push_back(b);
  }
  norm_gain_ = constant(-1, "norm.gain", d, S(1));
  norm_bias_ = constant(-1, "norm.bias", d, S(0));
  head_w_ = weight(-1, "head.weight", config_.num_classes, d);
  head_b_ = constant(-1, "head.bias", config_.num_classes, S(0));
}

template <typename S>
void ViTModel<S>::reset_head(int num_classes, std::uint64_t seed) {
  if (num_classes <= 0) throw ConfigError("num_classes must be positive");
  config_.num_classes = num_classes;
  auto rng = substream(seed, "init/head");
  auto& w = params_[head_w_];
  auto& b = params_[head_b_];
  w.tensor = init_weight<S>(rng, num_classes, config_.embed_dim);
  w.info.shape = w.tensor.shape();
  b.tensor = Tensor<S>::zeros({num_classes});
  b.info.shape = b.tensor.shape();
}

template <typename S>
template <typename T>
void ViTModel<S>::copy_values_from(const ViTModel<T>& other) {
  if (!(other.config() == config_)) throw InputError("copy_values_from: model configurations differ");
  const auto& src = other.parameters();
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto dst = params_[i].tensor.mutable_data();
    auto values = src[i].tensor.data();
    std::transform(values.begin(), values.end(), dst.begin(), [](T v) { return static_cast<S>(v); });
  }
}

template <typename S>
ForwardTrace<S> ViTModel<S>::forward(std::span<const float> images, std::int64_t batch,
                                     const RefinePlan* plan, ForwardOptions options) const {
  return forward_patches(patchify_batch<S>(images, batch, config_), plan, options);
}

template <typename S>
ForwardTrace<S> ViTModel<S>::forward_patches(const Tensor<S>& patches, const RefinePlan* plan,
                                             ForwardOptions options) const {
  const auto& c = config_;
  if (patches.rank() != 3 || patches.dim(1) != c.num_patches() || patches.dim(2) != c.patch_dim()) {
    throw InputError("forward: patches " + shape_str(patches.shape()) + " do not match the model");
  }
  if (plan) plan->validate(c.num_layers);
  const std::int64_t batch = patches.dim(0);
  const std::int64_t d = c.embed_dim, heads = c.num_heads, dh = c.head_dim();
  const S attn_scale = S(1) / std::sqrt(static_cast<S>(dh));

  ForwardTrace<S> trace;
  trace.batch = batch;
  if (options.record_refinements) trace.refinements.resize(static_cast<std::size_t>(batch));

  // origins[b][t]: original patch indices folded into token t (row t+1)
  std::vector<std::vector<std::vector<std::int64_t>>> origins;
  if (options.record_refinements) {
    origins.assign(static_cast<std::size_t>(batch), {});
    for (auto& o : origins) {
      for (std::int64_t i = 0; i < c.num_patches(); ++i) o.push_back({i});
    }
  }

  auto x = linear(patches, p(patch_w_), p(patch_b_));
  x = concat_rows(expand_batch(p(cls_), batch), x);
  x = add(x, p(pos_));

  for (int l = 0; l < c.num_layers; ++l) {
    const auto& blk = blocks_[static_cast<std::size_t>(l)];
    const std::int64_t tokens = x.dim(1);
    trace.token_counts.push_back(tokens);

    auto h = layer_norm(x, p(blk.norm1_gain), p(blk.norm1_bias));
    auto split = [&](const Tensor<S>& t) {
      return transpose(reshape(t, {batch, tokens, heads, dh}), 1, 2);
    };
    auto q = split(linear(h, p(blk.q_w), p(blk.q_b)));
    auto k = split(linear(h, p(blk.k_w), p(blk.k_b)));
    auto v = split(linear(h, p(blk.v_w), p(blk.v_b)));
    auto attn = softmax(scale(matmul(q, transpose(k, 2, 3)), attn_scale), -1);
    auto ctx = reshape(transpose(matmul(attn, v), 1, 2), {batch, tokens, d});
    x = add(x, linear(ctx, p(blk.o_w), p(blk.o_b)));

    auto h2 = layer_norm(x, p(blk.norm2_gain), p(blk.norm2_bias));
    x = add(x, linear(gelu(linear(h2, p(blk.fc1_w), p(blk.fc1_b))), p(blk.fc2_w), p(blk.fc2_b)));

    const auto a = attn.data();
    const std::int64_t per_sample = heads * tokens * tokens;
    std::vector<S> cls_rows(static_cast<std::size_t>(batch * tokens), S(0));
    for (std::int64_t b = 0; b < batch; ++b) {
      for (std::int64_t hh = 0; hh < heads; ++hh) {
        const S* row = a.data() + b * per_sample + hh * tokens * tokens;
        for (std::int64_t j = 0; j < tokens; ++j) cls_rows[b * tokens + j] += row[j];
      }
    }
    for (auto& value : cls_rows) value /= S(heads);
    trace.cls_attention.push_back(std::move(cls_rows));
    if (options.record_attention) trace.attention.emplace_back(a.begin(), a.end());

    if (plan && plan->refines(l)) {
      std::vector<std::vector<S>> scores;
      scores.reserve(static_cast<std::size_t>(batch));
      for (std::int64_t b = 0; b < batch; ++b) {
        scores.push_back(cls_attention_scores<S>(a.subspan(b * per_sample, per_sample),
                                                 static_cast<int>(heads), tokens));
      }
      std::vector<RefineDecision<S>> decisions;
      x = refine_batch(x, scores, plan->rho, options.record_refinements ? &decisions : nullptr);
      for (std::size_t b = 0; b < decisions.size(); ++b) {
        RefinementRecord record;
        record.layer = l;
        std::vector<std::vector<std::int64_t>> next;
        for (auto i : decisions[b].kept) {
          const auto& from = origins[b][i];
          if (from.size() == 1) record.kept_patch_indices.push_back(from.front());
          next.push_back(from);
        }
        std::vector<std::int64_t> merged;
        for (auto i : decisions[b].discarded) {
          merged.insert(merged.end(), origins[b][i].begin(), origins[b][i].end());
        }
        std::sort(merged.begin(), merged.end());
        record.merged_from_indices = merged;
        next.push_back(std::move(merged));
        origins[b] = std::move(next);
        trace.refinements[b].push_back(std::move(record));
      }
    }
  }

  trace.final_cls = reshape(gather_rows(x, std::vector<std::vector<std::int64_t>>(
                                               static_cast<std::size_t>(batch), {0})),
                            {batch, d});
  trace.logits = classify(trace);
  return trace;
}

template <typename S>
Tensor<S> ViTModel<S>::classify(const ForwardTrace<S>& trace) const {
  if (!trace.final_cls.defined()) throw UsageError("classify: trace has no [CLS] representation");
  return linear(layer_norm(trace.final_cls, p(norm_gain_), p(norm_bias_)), p(head_w_), p(head_b_));
}

template <typename S>
std::vector<std::int64_t> argmax_rows(const Tensor<S>& logits) {
  const std::int64_t rows = logits.dim(0), k = logits.dim(1);
  std::vector<std::int64_t> out(static_cast<std::size_t>(rows));
  for (std::int64_t r = 0; r < rows; ++r) {
    std::int64_t best = 0;
    for (std::int64_t j = 1; j < k; ++j) {
      if (logits.at(r * k + j) > logits.at(r * k + best)) best = j;
    }
    out[r] = best;
  }
  return out;
}

template Tensor<float> patchify<float>(const Tensor<float>&, const ModelConfig&);
template Tensor<double> patchify<double>(const Tensor<double>&, const ModelConfig&);
template Tensor<float> patchify_batch<float>(std::span<const float>, std::int64_t, const ModelConfig&);
template Tensor<double> patchify_batch<double>(std::span<const float>, std::int64_t, const ModelConfig&);
template class ViTModel<float>;
template class ViTModel<double>;
template void ViTModel<float>::copy_values_from<float>(const ViTModel<float>&);
template void ViTModel<float>::copy_values_from<double>(const ViTModel<double>&);
template void ViTModel<double>::copy_values_from<float>(const ViTModel<float>&);
template void ViTModel<double>::copy_values_from<double>(const ViTModel<double>&);
template std::vector<std::int64_t> argmax_rows<float>(const Tensor<float>&);
template std::vector<std::int64_t> argmax_rows<double>(const Tensor<double>&);

}  // namespace trpts
