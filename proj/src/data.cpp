// Copyright 2026 The TR-PTS Authors
// SPDX-License-Identifier: Apache-2.0

#include "trpts/data.hpp"

#include <algorithm>
#include <cmath>

#include "trpts/error.hpp"
#include "trpts/rng.hpp"

namespace trpts {

std::string to_string(TaskFamily family) {
  switch (family) {
    case TaskFamily::kShape: return "shape-class";
    case TaskFamily::kQuadrant: return "quadrant-class";
    case TaskFamily::kCount: return "count-class";
  }
  return "shape-class";
}

TaskFamily parse_task_family(std::string_view text) {
  if (text == "shape-class") return TaskFamily::kShape;
  if (text == "quadrant-class") return TaskFamily::kQuadrant;
  if (text == "count-class") return TaskFamily::kCount;
  throw ConfigError("unknown task family '" + std::string(text) +
                    "' (expected shape-class|quadrant-class|count-class)");
}

std::span<const float> Dataset::image(std::int64_t i) const {
  return std::span<const float>(images).subspan(static_cast<std::size_t>(i * image_numel()),
                                                static_cast<std::size_t>(image_numel()));
}

TensorPack Dataset::to_pack() const {
  TensorPack pack;
  const auto n = static_cast<std::uint64_t>(size());
  pack.add_f32("images", {n, static_cast<std::uint64_t>(height), static_cast<std::uint64_t>(width),
                          static_cast<std::uint64_t>(channels)},
               images);
  pack.add_i64("labels", {n}, labels);
  const std::int64_t classes = num_classes;
  pack.add_i64("num_classes", {}, std::span<const std::int64_t>(&classes, 1));
  return pack;
}

Dataset Dataset::from_pack(const TensorPack& pack, std::string name) {
  Dataset data;
  data.name = std::move(name);
  const auto& entry = pack.entry("images");
  if (entry.dims.size() != 4) throw InputError("dataset images must have rank 4 [n,H,W,C]");
  data.height = static_cast<int>(entry.dims[1]);
  data.width = static_cast<int>(entry.dims[2]);
  data.channels = static_cast<int>(entry.dims[3]);
  data.images = pack.f32("images");
  data.labels = pack.i64("labels");
  data.num_classes = static_cast<int>(pack.i64("num_classes").at(0));
  if (static_cast<std::uint64_t>(data.size()) != entry.dims[0]) {
    throw InputError("dataset has " + std::to_string(entry.dims[0]) + " images but " +
                     std::to_string(data.size()) + " labels");
  }
  for (auto y : data.labels) {
    if (y < 0 || y >= data.num_classes) throw InputError("dataset label out of range");
  }
  return data;
}

Batch make_batch(const Dataset& data, std::span<const std::int64_t> indices) {
  Batch batch;
  batch.images.reserve(indices.size() * static_cast<std::size_t>(data.image_numel()));
  for (auto i : indices) {
    if (i < 0 || i >= data.size()) throw InputError("batch index out of range");
    auto img = data.image(i);
    batch.images.insert(batch.images.end(), img.begin(), img.end());
    batch.labels.push_back(data.labels[static_cast<std::size_t>(i)]);
  }
  return batch;
}

std::vector<std::vector<std::int64_t>> shuffled_batches(std::int64_t n, std::int64_t batch_size,
                                                        std::mt19937_64& rng) {
  if (batch_size <= 0) throw ConfigError("batch size must be positive");
  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) order[i] = i;
  shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::int64_t>> batches;
  for (std::int64_t start = 0; start < n; start += batch_size) {
    const auto stop = std::min(n, start + batch_size);
    batches.emplace_back(order.begin() + start, order.begin() + stop);
  }
  return batches;
}

void SyntheticTaskSpec::validate() const {
  if (image_size < 16) throw ConfigError("synthetic images must be at least 16 pixels wide");
  if (train_size <= 0 || val_size <= 0 || test_size <= 0) {
    throw ConfigError("dataset split sizes must be positive");
  }
  if (noise < 0.0) throw ConfigError("noise level must be non-negative");
  switch (family) {
    case TaskFamily::kShape:
      if (num_classes < 2 || num_classes > 4) throw ConfigError("shape-class supports 2..4 classes");
      break;
    case TaskFamily::kQuadrant:
      if (num_classes != 4) throw ConfigError("quadrant-class has exactly 4 classes");
      break;
    case TaskFamily::kCount:
      if (num_classes < 2 || num_classes > 6) throw ConfigError("count-class supports 2..6 classes");
      break;
  }
}

namespace {

class Canvas {
 public:
  explicit Canvas(int size) : size_(size), pixels_(static_cast<std::size_t>(size) * size, 0.0f) {}

  void set(int y, int x, float v) {
    if (y >= 0 && y < size_ && x >= 0 && x < size_) pixels_[static_cast<std::size_t>(y) * size_ + x] = v;
  }
  int size() const { return size_; }
  std::vector<float>& pixels() { return pixels_; }

 private:
  int size_;
  std::vector<float> pixels_;
};

int uniform_int(std::mt19937_64& rng, int lo, int hi) {  // inclusive
  return lo + static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(hi - lo + 1)));
}

float intensity(std::mt19937_64& rng) { return static_cast<float>(0.6 + 0.4 * uniform01(rng)); }

void draw_shape(Canvas& canvas, int kind, std::mt19937_64& rng) {
  const int s = canvas.size();
  const int r = uniform_int(rng, s / 6, s / 4 + 1);
  const int cy = uniform_int(rng, r, s - 1 - r);
  const int cx = uniform_int(rng, r, s - 1 - r);
  const float v = intensity(rng);
  const int arm = std::max(1, r / 3);
  for (int y = cy - r; y <= cy + r; ++y) {
    for (int x = cx - r; x <= cx + r; ++x) {
      const int dy = y - cy, dx = x - cx;
      bool inside = false;
      switch (kind) {
        case 0: inside = true; break;                                    // square
        case 1: inside = dy * dy + dx * dx <= r * r; break;               // disk
        case 2: inside = 2 * std::abs(dx) <= (dy + r); break;            // upward triangle
        case 3: inside = std::abs(dy) <= arm || std::abs(dx) <= arm; break;  // cross
        default: break;
      }
      if (inside) canvas.set(y, x, v);
    }
  }
}

void draw_blob_in_quadrant(Canvas& canvas, int quadrant, std::mt19937_64& rng) {
  const int s = canvas.size(), half = s / 2;
  const int r = uniform_int(rng, 2, std::max(2, s / 10));
  const int y0 = (quadrant / 2) * half, x0 = (quadrant % 2) * half;
  const int cy = y0 + uniform_int(rng, r, half - 1 - r);
  const int cx = x0 + uniform_int(rng, r, half - 1 - r);
  const float v = intensity(rng);
  for (int y = cy - r; y <= cy + r; ++y) {
    for (int x = cx - r; x <= cx + r; ++x) {
      if ((y - cy) * (y - cy) + (x - cx) * (x - cx) <= r * r) canvas.set(y, x, v);
    }
  }
}

void draw_squares(Canvas& canvas, int count, std::mt19937_64& rng) {
  const int s = canvas.size(), side = 3;
  std::vector<std::pair<int, int>> placed;
  while (static_cast<int>(placed.size()) < count) {
    const int y = uniform_int(rng, 1, s - side - 1);
    const int x = uniform_int(rng, 1, s - side - 1);
    const bool clear = std::all_of(placed.begin(), placed.end(), [&](const auto& p) {
      return std::abs(p.first - y) > side + 1 || std::abs(p.second - x) > side + 1;
    });
    if (!clear) continue;
    placed.emplace_back(y, x);
    const float v = intensity(rng);
    for (int dy = 0; dy < side; ++dy)
      for (int dx = 0; dx < side; ++dx) canvas.set(y + dy, x + dx, v);
  }
}

}  // namespace

Dataset generate_split(const SyntheticTaskSpec& spec, std::string_view split, std::int64_t count) {
  spec.validate();
  auto rng = substream(spec.seed, "data/" + to_string(spec.family) + "/" + std::string(split));
  Dataset data;
  data.name = to_string(spec.family) + "/" + std::string(split);
  data.height = data.width = spec.image_size;
  data.channels = 1;
  data.num_classes = spec.num_classes;
  data.labels.resize(static_cast<std::size_t>(count));
  for (std::int64_t i = 0; i < count; ++i) data.labels[i] = i % spec.num_classes;
  shuffle(data.labels.begin(), data.labels.end(), rng);
  data.images.reserve(static_cast<std::size_t>(count * data.image_numel()));
  for (std::int64_t i = 0; i < count; ++i) {
    Canvas canvas(spec.image_size);
    const int label = static_cast<int>(data.labels[i]);
    switch (spec.family) {
      case TaskFamily::kShape: draw_shape(canvas, label, rng); break;
      case TaskFamily::kQuadrant: draw_blob_in_quadrant(canvas, label, rng); break;
      case TaskFamily::kCount: draw_squares(canvas, label + 1, rng); break;
    }
    auto& px = canvas.pixels();
    if (spec.noise > 0.0) {
      for (auto& p : px) p += static_cast<float>(spec.noise * standard_normal(rng));
    }
    data.images.insert(data.images.end(), px.begin(), px.end());
  }
  return data;
}

TaskSplits generate_task(const SyntheticTaskSpec& spec) {
  return {generate_split(spec, "train", spec.train_size), generate_split(spec, "val", spec.val_size),
          generate_split(spec, "test", spec.test_size)};
}

}  // namespace trpts
