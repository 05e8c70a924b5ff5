// Copyright 2026 The TR-PTS Authors
// SPDX-License-Identifier: Apache-2.0

// Dense tensors with tape-free reverse-mode differentiation.
//
// Every operation producing a tensor from inputs that require gradients
// records its inputs and an adjoint closure on the result node. Nodes carry a
// monotonically increasing sequence number, so replaying adjoints in
// decreasing sequence order is a valid reverse execution order.
//
// Broadcasting is limited to leading batch dimensions: a binary elementwise
// operand may have a shape equal to a suffix of the other operand's shape.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace trpts {

using Shape = std::vector<std::int64_t>;

// Storage aligned to 64 bytes. Vectorized reductions choose their summation
// order from the address of the data, so a fixed base alignment keeps results
// bit-reproducible from one allocation to the next.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlignment{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlignment)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlignment); }
  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

template <typename S>
using Buffer = std::vector<S, AlignedAllocator<S>>;

std::int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

template <typename S>
struct TensorNode {
  Shape shape;
  Buffer<S> value;
  Buffer<S> grad;  // empty until an adjoint reaches this node
  bool requires_grad = false;
  std::uint64_t seq = 0;
  const char* op = "leaf";
  std::vector<std::shared_ptr<TensorNode>> inputs;
  std::function<void(TensorNode&)> adjoint;

  bool is_leaf() const { return inputs.empty(); }
  // Zero-filled grad buffer, allocated on first use.
  Buffer<S>& grad_buffer();
};

template <typename S>
class Tensor {
 public:
  using Scalar = S;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorNode<S>> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, S value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<S> values, bool requires_grad = false);
  static Tensor scalar(S value);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  // Negative axes count from the back.
  std::int64_t dim(int axis) const;
  std::int64_t numel() const { return static_cast<std::int64_t>(node_->value.size()); }

  std::span<const S> data() const { return node_->value; }
  // Only leaves may be written (parameter updates, data loading).
  std::span<S> mutable_data();
  S item() const;
  S at(std::int64_t flat) const { return node_->value[static_cast<std::size_t>(flat)]; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on);
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const S> grad() const { return node_->grad; }
  std::span<S> mutable_grad() { return node_->grad_buffer(); }
  void zero_grad();

  // Fresh leaf sharing no history with this tensor.
  Tensor detach() const;

  TensorNode<S>* node() const { return node_.get(); }
  const std::shared_ptr<TensorNode<S>>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<TensorNode<S>> node_;
};

/// Whether newly created operations record adjoints. Thread-local.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Counts multiply-accumulate work of matmul/linear as 2 FLOPs per MAC while
/// alive. Thread-local; nesting is not supported.
class FlopScope {
 public:
  FlopScope();
  ~FlopScope();
  FlopScope(const FlopScope&) = delete;
  FlopScope& operator=(const FlopScope&) = delete;
  std::uint64_t flops() const;
};

/// Ordered record of the operations reachable from a root, in execution order.
template <typename S>
class Graph {
 public:
  static Graph record(const Tensor<S>& root);
  const std::vector<TensorNode<S>*>& ops() const { return ops_; }
  // Replays adjoints in reverse execution order, seeding root grad with one.
  void replay(const std::function<void(const TensorNode<S>&)>& visit = {}) const;

 private:
  std::vector<TensorNode<S>*> ops_;
  TensorNode<S>* root_ = nullptr;
};

/// Accumulates d(loss)/d(leaf) into every reachable leaf that requires grad.
/// Intermediate gradients are released afterwards.
template <typename S>
void backward(const Tensor<S>& loss);

// ---- operations -----------------------------------------------------------

template <typename S> Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b);
template <typename S> Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b);
template <typename S> Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b);
template <typename S> Tensor<S> scale(const Tensor<S>& a, S factor);
template <typename S> Tensor<S> sum(const Tensor<S>& a);
template <typename S> Tensor<S> mean(const Tensor<S>& a, int axis);

/// a[..., m, k] x b[k, n] or a[..., m, k] x b[..., k, n] (same batch dims).
template <typename S> Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b);
/// x[..., in] * weight[out, in]^T + bias[out]; bias may be undefined.
template <typename S>
Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& weight, const Tensor<S>& bias);

template <typename S> Tensor<S> gelu(const Tensor<S>& x);
template <typename S> Tensor<S> softmax(const Tensor<S>& x, int axis);
/// Normalizes the last axis, then applies gain and bias of that width.
template <typename S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gain, const Tensor<S>& bias,
                     S eps = S(1e-6));

template <typename S> Tensor<S> reshape(const Tensor<S>& x, Shape shape);
template <typename S> Tensor<S> transpose(const Tensor<S>& x, int axis_a, int axis_b);

/// x[B, T, d] -> [B, T', d] taking rows index[b] for batch element b.
/// A rank-2 x[T, d] takes a single index list.
template <typename S>
Tensor<S> gather_rows(const Tensor<S>& x, const std::vector<std::vector<std::int64_t>>& index);
/// x[B, T, d] -> [B, 1, d] with constant row weights weights[b][t].
template <typename S>
Tensor<S> weighted_row_sum(const Tensor<S>& x, const std::vector<std::vector<S>>& weights);
/// Concatenate a[B, Ta, d] and b[B, Tb, d] along the row axis.
template <typename S> Tensor<S> concat_rows(const Tensor<S>& a, const Tensor<S>& b);
/// Prepend a batch axis of size batch, x[...] -> [batch, ...].
template <typename S> Tensor<S> expand_batch(const Tensor<S>& x, std::int64_t batch);

/// Mean over the batch of -log softmax(logits)[label].
template <typename S>
Tensor<S> cross_entropy(const Tensor<S>& logits, std::span<const std::int64_t> labels);

}  // namespace trpts
