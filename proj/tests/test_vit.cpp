// Copyright 2026 The TR-PTS Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "test_support.hpp"
#include "trpts/error.hpp"
#include "trpts/vit.hpp"

namespace trpts {
namespace {

using testing::random_images;
using testing::tiny_config;

void randomize(ViTModel<double>& model, std::uint64_t seed, double spread = 0.5) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-spread, spread);
  for (auto& p : model.parameters()) {
    for (auto& v : p.tensor.mutable_data()) v = dist(rng);
  }
}

// ---- independent straight-line forward ------------------------------------

using Mat = std::vector<std::vector<double>>;

std::vector<double> values(const ViTModel<double>& m, const std::string& name) {
  auto d = m.parameters().at(name).tensor.data();
  return {d.begin(), d.end()};
}

Mat affine(const Mat& x, const std::vector<double>& w, const std::vector<double>& b, std::size_t out) {
  const std::size_t in = x.front().size();
  Mat y(x.size(), std::vector<double>(out));
  for (std::size_t r = 0; r < x.size(); ++r) {
    for (std::size_t o = 0; o < out; ++o) {
      double acc = b[o];
      for (std::size_t i = 0; i < in; ++i) acc += w[o * in + i] * x[r][i];
      y[r][o] = acc;
    }
  }
  return y;
}

Mat norm(const Mat& x, const std::vector<double>& g, const std::vector<double>& b) {
  Mat y = x;
  for (auto& row : y) {
    const double n = static_cast<double>(row.size());
    double mu = 0, var = 0;
    for (double v : row) mu += v;
    mu /= n;
    for (double v : row) var += (v - mu) * (v - mu);
    var /= n;
    for (std::size_t i = 0; i < row.size(); ++i) row[i] = (row[i] - mu) / std::sqrt(var + 1e-6) * g[i] + b[i];
  }
  return y;
}

std::vector<double> reference_logits(const ViTModel<double>& m, std::span<const float> image) {
  const auto& c = m.config();
  const int P = c.patch_size, gw = c.image_width / P;
  const auto N = static_cast<std::size_t>(c.num_patches());
  const auto d = static_cast<std::size_t>(c.embed_dim);
  Mat patches(N);
  for (std::size_t n = 0; n < N; ++n) {
    const int py = static_cast<int>(n) / gw, px = static_cast<int>(n) % gw;
    for (int y = 0; y < P; ++y)
      for (int x = 0; x < P; ++x)
        for (int ch = 0; ch < c.channels; ++ch)
          patches[n].push_back(image[((py * P + y) * c.image_width + px * P + x) * c.channels + ch]);
  }
  Mat h = affine(patches, values(m, "patch.weight"), values(m, "patch.bias"), d);
  h.insert(h.begin(), values(m, "cls"));
  const auto pos = values(m, "pos");
  for (std::size_t t = 0; t < h.size(); ++t)
    for (std::size_t i = 0; i < d; ++i) h[t][i] += pos[t * d + i];

  const std::size_t T = h.size(), H = static_cast<std::size_t>(c.num_heads), dh = d / H;
  for (int l = 0; l < c.num_layers; ++l) {
    const std::string p = "block" + std::to_string(l) + ".";
    auto a = norm(h, values(m, p + "norm1.gain"), values(m, p + "norm1.bias"));
    auto q = affine(a, values(m, p + "attn.q.weight"), values(m, p + "attn.q.bias"), d);
    auto k = affine(a, values(m, p + "attn.k.weight"), values(m, p + "attn.k.bias"), d);
    auto v = affine(a, values(m, p + "attn.v.weight"), values(m, p + "attn.v.bias"), d);
    Mat ctx(T, std::vector<double>(d, 0.0));
    for (std::size_t hh = 0; hh < H; ++hh) {
      for (std::size_t i = 0; i < T; ++i) {
        std::vector<double> s(T);
        double mx = -1e300;
        for (std::size_t j = 0; j < T; ++j) {
          double dot = 0;
          for (std::size_t e = 0; e < dh; ++e) dot += q[i][hh * dh + e] * k[j][hh * dh + e];
          s[j] = dot / std::sqrt(static_cast<double>(dh));
          mx = std::max(mx, s[j]);
        }
        double z = 0;
        for (auto& x : s) z += (x = std::exp(x - mx));
        for (std::size_t j = 0; j < T; ++j)
          for (std::size_t e = 0; e < dh; ++e) ctx[i][hh * dh + e] += s[j] / z * v[j][hh * dh + e];
      }
    }
    auto o = affine(ctx, values(m, p + "attn.o.weight"), values(m, p + "attn.o.bias"), d);
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t i = 0; i < d; ++i) h[t][i] += o[t][i];
    auto b = norm(h, values(m, p + "norm2.gain"), values(m, p + "norm2.bias"));
    const auto hidden = static_cast<std::size_t>(c.mlp_hidden());
    auto f = affine(b, values(m, p + "mlp.fc1.weight"), values(m, p + "mlp.fc1.bias"), hidden);
    for (auto& row : f)
      for (auto& x : row) x = 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0)));
    auto g = affine(f, values(m, p + "mlp.fc2.weight"), values(m, p + "mlp.fc2.bias"), d);
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t i = 0; i < d; ++i) h[t][i] += g[t][i];
  }
  auto cls = norm(Mat{h[0]}, values(m, "norm.gain"), values(m, "norm.bias"));
  return affine(cls, values(m, "head.weight"), values(m, "head.bias"), static_cast<std::size_t>(c.num_classes))[0];
}

// ---------------------------------------------------------------------------

TEST(Patchify, GridOrderAndShapes) {
  auto c = tiny_config();
  std::vector<double> img(64);
  std::iota(img.begin(), img.end(), 0.0);
  auto p = patchify(Tensor<double>::from({8, 8, 1}, img), c);
  ASSERT_EQ(p.shape(), (Shape{4, 16}));
  // patch 1 is the top-right 4x4 block; its first row covers columns 4..7
  EXPECT_EQ(p.at(16 + 0), 4.0);
  EXPECT_EQ(p.at(16 + 3), 7.0);
  EXPECT_EQ(p.at(16 + 4), 12.0);
  // patch 2 starts at row 4, column 0
  EXPECT_EQ(p.at(32), 32.0);

  auto big = tiny_config();
  big.image_height = big.image_width = 224;
  big.patch_size = 16;
  big.channels = 3;
  EXPECT_EQ(big.num_patches(), 196);
}

TEST(Patchify, ConstantImageGivesConstantRows) {
  auto c = tiny_config();
  auto p = patchify(Tensor<double>::full({8, 8, 1}, 0.25), c);
  for (double v : p.data()) EXPECT_EQ(v, 0.25);
}

TEST(Patchify, RejectsMismatchedImage) {
  auto c = tiny_config();
  EXPECT_THROW(patchify(Tensor<double>::zeros({8, 6, 1}), c), InputError);
  auto bad = tiny_config();
  bad.patch_size = 3;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(ViT, MatchesStraightLineReimplementation) {
  auto c = tiny_config(2, 8, 2, 8, 4, 3, 5);
  ViTModel<double> model(c);
  randomize(model, 17);
  std::mt19937_64 rng(3);
  const auto images = random_images(rng, 3, c);
  auto trace = model.forward(images, 3);
  for (int b = 0; b < 3; ++b) {
    const auto ref = reference_logits(model, std::span<const float>(images).subspan(b * 64, 64));
    for (int k = 0; k < 3; ++k) EXPECT_NEAR(trace.logits.at(b * 3 + k), ref[k], 1e-10);
  }
}

TEST(ViT, AttentionRowsSumToOne) {
  auto c = tiny_config(3, 8, 2);
  ViTModel<float> model(c);
  std::mt19937_64 rng(4);
  const auto images = random_images(rng, 2, c);
  ForwardOptions opts;
  opts.record_attention = true;
  auto trace = model.forward(images, 2, nullptr, opts);
  ASSERT_EQ(trace.attention.size(), 3u);
  const std::int64_t T = 5;
  for (const auto& layer : trace.attention) {
    for (std::size_t row = 0; row < layer.size() / T; ++row) {
      double total = 0;
      for (std::int64_t j = 0; j < T; ++j) total += layer[row * T + j];
      EXPECT_NEAR(total, 1.0, 1e-5);
    }
  }
}

TEST(ViT, PermutingTokensWithPositionsKeepsLogits) {
  auto c = tiny_config(2, 8, 2, 12, 4, 3, 9);  // 9 patches
  ViTModel<double> model(c);
  randomize(model, 21);
  std::mt19937_64 rng(8);
  const auto images = random_images(rng, 2, c);
  auto patches = patchify_batch<double>(images, 2, c);

  std::vector<std::int64_t> perm(9);
  std::iota(perm.begin(), perm.end(), 0);
  shuffle(perm.begin(), perm.end(), rng);

  ViTModel<double> permuted = model;
  auto pos = permuted.parameters().find("pos")->tensor.mutable_data();
  const auto orig = model.parameters().at("pos").tensor.data();
  const std::int64_t d = c.embed_dim, pd = c.patch_dim();
  std::vector<double> moved(patches.numel());
  for (std::int64_t b = 0; b < 2; ++b) {
    for (std::int64_t t = 0; t < 9; ++t) {
      for (std::int64_t i = 0; i < pd; ++i) moved[(b * 9 + t) * pd + i] = patches.at((b * 9 + perm[t]) * pd + i);
    }
  }
  for (std::int64_t t = 0; t < 9; ++t) {
    for (std::int64_t i = 0; i < d; ++i) pos[(t + 1) * d + i] = orig[(perm[t] + 1) * d + i];
  }
  auto a = model.forward_patches(patches).logits;
  auto b = permuted.forward_patches(Tensor<double>::from(patches.shape(), moved)).logits;
  for (std::int64_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a.at(i), b.at(i), 1e-10);
}

TEST(ViT, TokenCountsFollowPlan) {
  auto c = tiny_config(5, 8, 2, 16, 4, 3);  // N = 16
  ViTModel<float> model(c);
  std::mt19937_64 rng(2);
  const auto images = random_images(rng, 2, c);
  EXPECT_EQ(model.forward(images, 2).token_counts, (std::vector<std::int64_t>{17, 17, 17, 17, 17}));
  RefinePlan plan{{2}, 0.8, PlacementMode::kExplicit};
  EXPECT_EQ(model.forward(images, 2, &plan).token_counts, (std::vector<std::int64_t>{17, 17, 17, 14, 14}));
  RefinePlan bad{{5}, 0.8, PlacementMode::kExplicit};
  EXPECT_THROW(model.forward(images, 2, &bad), ConfigError);
}

TEST(ViT, UnitRateRefinementIsBitIdentical) {
  auto c = tiny_config(12, 8, 2, 16, 4, 3);
  ViTModel<float> model(c);
  std::mt19937_64 rng(6);
  const auto images = random_images(rng, 4, c);
  RefinePlan plan{{4, 7, 10}, 1.0, PlacementMode::kExplicit};
  auto a = model.forward(images, 4).logits;
  auto b = model.forward(images, 4, &plan).logits;
  ASSERT_EQ(a.numel(), b.numel());
  for (std::int64_t i = 0; i < a.numel(); ++i) EXPECT_EQ(a.at(i), b.at(i));
}

TEST(ViT, ZeroHeadGivesZeroLogitsAndEqualRowsTie) {
  auto c = tiny_config(1, 8, 2, 8, 4, 2);
  ViTModel<double> model(c);
  randomize(model, 4);
  std::mt19937_64 rng(1);
  const auto images = random_images(rng, 3, c);
  auto w = model.parameters().find("head.weight")->tensor.mutable_data();
  auto bias = model.parameters().find("head.bias")->tensor.mutable_data();
  for (std::size_t i = 0; i < 8; ++i) w[8 + i] = w[i];
  bias[1] = bias[0];
  auto tied = model.forward(images, 3).logits;
  for (int b = 0; b < 3; ++b) EXPECT_EQ(tied.at(2 * b), tied.at(2 * b + 1));
  std::fill(w.begin(), w.end(), 0.0);
  std::fill(bias.begin(), bias.end(), 0.0);
  const auto zero = model.forward(images, 3).logits;
  for (double v : zero.data()) EXPECT_EQ(v, 0.0);
}

TEST(ViT, InitIsSeededAndCopiesAreIndependent) {
  auto c = tiny_config();
  ViTModel<float> a(c), b(c);
  for (std::size_t i = 0; i < a.parameters().size(); ++i) {
    const auto x = a.parameters()[i].tensor.data(), y = b.parameters()[i].tensor.data();
    EXPECT_TRUE(std::equal(x.begin(), x.end(), y.begin()));
  }
  ViTModel<float> copy = a;
  copy.parameters()[0].tensor.mutable_data()[0] += 1.0f;
  EXPECT_NE(copy.parameters()[0].tensor.at(0), a.parameters()[0].tensor.at(0));
}

TEST(ViT, ResetHeadChangesClassCount) {
  auto c = tiny_config();
  ViTModel<float> model(c);
  model.reset_head(5, 3);
  EXPECT_EQ(model.config().num_classes, 5);
  std::mt19937_64 rng(1);
  EXPECT_EQ(model.forward(random_images(rng, 2, c), 2).logits.shape(), (Shape{2, 5}));
  EXPECT_EQ(model.parameters().at("head.weight").info.shape, (Shape{5, 8}));
}

TEST(ViT, ArgmaxTiesGoToLowerClass) {
  auto logits = Tensor<float>::from({2, 3}, {1, 3, 3, 0, -1, 0});
  EXPECT_EQ(argmax_rows(logits), (std::vector<std::int64_t>{1, 0}));
}

}  // namespace
}  // namespace trpts
