// Copyright 2026 The TR-PTS Authors
// SPDX-License-Identifier: Apache-2.0

#include "trpts/tensor.hpp"

#include <Eigen/Core>
#include <unsupported/Eigen/SpecialFunctions>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <numbers>
#include <sstream>
#include <unordered_set>

#include "trpts/error.hpp"

namespace trpts {

std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {

std::atomic<std::uint64_t> g_sequence{0};
thread_local bool t_grad_enabled = true;
thread_local bool t_count_flops = false;
thread_local std::uint64_t t_flops = 0;

void count_macs(std::uint64_t macs) {
  if (t_count_flops) t_flops += 2 * macs;
}

template <typename S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MatMap = Eigen::Map<RowMat<S>>;
template <typename S>
using ConstMatMap = Eigen::Map<const RowMat<S>>;

template <typename S>
std::shared_ptr<TensorNode<S>> new_node(Shape shape, Buffer<S> value) {
  auto node = std::make_shared<TensorNode<S>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->seq = g_sequence.fetch_add(1, std::memory_order_relaxed);
  return node;
}

template <typename S>
using Adjoint = std::function<void(TensorNode<S>&)>;

// Builds an op result; history is kept only when some input needs grad.
template <typename S>
Tensor<S> make_result(const char* op, Shape shape, Buffer<S> value,
                      std::initializer_list<const Tensor<S>*> inputs, Adjoint<S> adjoint) {
  auto node = new_node<S>(std::move(shape), std::move(value));
  node->op = op;
  if (t_grad_enabled) {
    bool any = false;
    for (const auto* in : inputs) any = any || (in->defined() && in->requires_grad());
    if (any) {
      node->requires_grad = true;
      for (const auto* in : inputs) node->inputs.push_back(in->defined() ? in->node_ptr() : nullptr);
      node->adjoint = std::move(adjoint);
    }
  }
  return Tensor<S>(std::move(node));
}

template <typename S>
bool wants_grad(const std::shared_ptr<TensorNode<S>>& in) {
  return in && in->requires_grad;
}

int normalize_axis(int axis, int rank) {
  const int a = axis < 0 ? axis + rank : axis;
  if (a < 0 || a >= rank) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for rank " +
                         std::to_string(rank));
  }
  return a;
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

template <typename S>
void check_finite(std::span<const S> values, const char* op) {
  using Vec = Eigen::Map<const Eigen::Array<S, Eigen::Dynamic, 1>>;
  if (!Vec(values.data(), static_cast<Eigen::Index>(values.size())).allFinite()) {
    throw NumericError(std::string(op) + ": non-finite input");
  }
}

enum class Binary { kAdd, kSub, kMul };

template <typename S>
Tensor<S> binary(const Tensor<S>& a, const Tensor<S>& b, Binary kind, const char* name) {
  const Shape* out_shape = nullptr;
  if (is_suffix(b.shape(), a.shape())) {
    out_shape = &a.shape();
  } else if (is_suffix(a.shape(), b.shape())) {
    out_shape = &b.shape();
  } else {
    throw DimensionError(std::string(name) + ": incompatible shapes " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
  }
  const auto n = static_cast<std::size_t>(numel(*out_shape));
  const auto na = a.data().size();
  const auto nb = b.data().size();
  auto av = a.data();
  auto bv = b.data();
  Buffer<S> out(n);
  // One operand spans the output; the other repeats over leading dims.
  const std::size_t inner = std::min(na, nb);
  const bool a_full = na == n;
  for (std::size_t base = 0; base < n; base += inner) {
    const S* pa = av.data() + (a_full ? base : 0);
    const S* pb = bv.data() + (a_full ? 0 : base);
    S* po = out.data() + base;
    switch (kind) {
      case Binary::kAdd:
        for (std::size_t i = 0; i < inner; ++i) po[i] = pa[i] + pb[i];
        break;
      case Binary::kSub:
        for (std::size_t i = 0; i < inner; ++i) po[i] = pa[i] - pb[i];
        break;
      case Binary::kMul:
        for (std::size_t i = 0; i < inner; ++i) po[i] = pa[i] * pb[i];
        break;
    }
  }
  return make_result<S>(name, *out_shape, std::move(out), {&a, &b}, [kind, n, na, nb](TensorNode<S>& self) {
    auto& ga_node = self.inputs[0];
    auto& gb_node = self.inputs[1];
    const S* g = self.grad.data();
    const std::size_t inner = std::min(na, nb);
    const bool a_full = na == n;
    S* ga = wants_grad(ga_node) ? ga_node->grad_buffer().data() : nullptr;
    S* gb = wants_grad(gb_node) ? gb_node->grad_buffer().data() : nullptr;
    const S* av = ga_node->value.data();
    const S* bv = gb_node->value.data();
    for (std::size_t base = 0; base < n; base += inner) {
      const std::size_t oa = a_full ? base : 0, ob = a_full ? 0 : base;
      const S* pg = g + base;
      if (ga) {
        S* pa = ga + oa;
        if (kind == Binary::kMul) {
          for (std::size_t i = 0; i < inner; ++i) pa[i] += pg[i] * bv[ob + i];
        } else {
          for (std::size_t i = 0; i < inner; ++i) pa[i] += pg[i];
        }
      }
      if (gb) {
        S* pb = gb + ob;
        if (kind == Binary::kMul) {
          for (std::size_t i = 0; i < inner; ++i) pb[i] += pg[i] * av[oa + i];
        } else if (kind == Binary::kSub) {
          for (std::size_t i = 0; i < inner; ++i) pb[i] -= pg[i];
        } else {
          for (std::size_t i = 0; i < inner; ++i) pb[i] += pg[i];
        }
      }
    }
  });
}

template <typename S>
using ArrayMap = Eigen::Map<Eigen::Array<S, Eigen::Dynamic, 1>>;
template <typename S>
using ConstArrayMap = Eigen::Map<const Eigen::Array<S, Eigen::Dynamic, 1>>;

// Exact (erf) GELU; Eigen's packet erf/exp keep this vectorized.
template <typename S>
void gelu_forward(const S* x, S* y, std::size_t n) {
  ConstArrayMap<S> in(x, static_cast<Eigen::Index>(n));
  ArrayMap<S>(y, static_cast<Eigen::Index>(n)) =
      S(0.5) * in * (S(1) + (in * S(std::numbers::sqrt2 / 2)).erf());
}

template <typename S>
void gelu_backward(const S* x, const S* dy, S* dx, std::size_t n) {
  ConstArrayMap<S> in(x, static_cast<Eigen::Index>(n));
  const auto cdf = S(0.5) * (S(1) + (in * S(std::numbers::sqrt2 / 2)).erf());
  const auto pdf = (S(-0.5) * in.square()).exp() * S(std::numbers::inv_sqrtpi / std::numbers::sqrt2);
  ArrayMap<S>(dx, static_cast<Eigen::Index>(n)) +=
      ConstArrayMap<S>(dy, static_cast<Eigen::Index>(n)) * (cdf + in * pdf);
}

}  // namespace

template <typename S>
Buffer<S>& TensorNode<S>::grad_buffer() {
  if (grad.empty()) grad.assign(value.size(), S(0));
  return grad;
}

// ---- Tensor ---------------------------------------------------------------

template <typename S>
Tensor<S> Tensor<S>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), S(0), requires_grad);
}

template <typename S>
Tensor<S> Tensor<S>::full(Shape shape, S value, bool requires_grad) {
  const auto n = static_cast<std::size_t>(trpts::numel(shape));
  auto node = new_node<S>(std::move(shape), Buffer<S>(n, value));
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

template <typename S>
Tensor<S> Tensor<S>::from(Shape shape, std::vector<S> values, bool requires_grad) {
  if (trpts::numel(shape) != static_cast<std::int64_t>(values.size())) {
    throw DimensionError("tensor shape " + shape_str(shape) + " does not match " +
                         std::to_string(values.size()) + " values");
  }
  auto node = new_node<S>(std::move(shape), Buffer<S>(values.begin(), values.end()));
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

template <typename S>
Tensor<S> Tensor<S>::scalar(S value) {
  return from({}, {value});
}

template <typename S>
std::int64_t Tensor<S>::dim(int axis) const {
  return node_->shape[static_cast<std::size_t>(normalize_axis(axis, rank()))];
}

template <typename S>
std::span<S> Tensor<S>::mutable_data() {
  if (!node_->is_leaf()) throw UsageError("only leaf tensors may be modified in place");
  return node_->value;
}

template <typename S>
S Tensor<S>::item() const {
  if (node_->value.size() != 1) {
    throw UsageError("item() on tensor of shape " + shape_str(node_->shape));
  }
  return node_->value[0];
}

template <typename S>
void Tensor<S>::set_requires_grad(bool on) {
  if (!node_->is_leaf()) throw UsageError("requires_grad can only be set on leaves");
  node_->requires_grad = on;
  if (!on) node_->grad.clear();
}

template <typename S>
void Tensor<S>::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), S(0));
}

template <typename S>
Tensor<S> Tensor<S>::detach() const {
  return Tensor(new_node<S>(node_->shape, node_->value));
}

// ---- grad mode, flop counting ---------------------------------------------

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

FlopScope::FlopScope() {
  t_count_flops = true;
  t_flops = 0;
}
FlopScope::~FlopScope() { t_count_flops = false; }
std::uint64_t FlopScope::flops() const { return t_flops; }

// ---- graph replay ---------------------------------------------------------

template <typename S>
Graph<S> Graph<S>::record(const Tensor<S>& root) {
  Graph graph;
  graph.root_ = root.node();
  if (!root.requires_grad()) return graph;
  std::unordered_set<TensorNode<S>*> seen;
  std::vector<TensorNode<S>*> stack{root.node()};
  seen.insert(root.node());
  while (!stack.empty()) {
    auto* node = stack.back();
    stack.pop_back();
    graph.ops_.push_back(node);
    for (const auto& in : node->inputs) {
      if (in && in->requires_grad && seen.insert(in.get()).second) stack.push_back(in.get());
    }
  }
  std::sort(graph.ops_.begin(), graph.ops_.end(),
            [](const auto* a, const auto* b) { return a->seq < b->seq; });
  return graph;
}

template <typename S>
void Graph<S>::replay(const std::function<void(const TensorNode<S>&)>& visit) const {
  if (ops_.empty()) return;
  for (auto* node : ops_) {
    if (!node->is_leaf()) node->grad.clear();
  }
  auto& seed = root_->grad_buffer();
  for (auto& g : seed) g += S(1);
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
    auto* node = *it;
    if (visit) visit(*node);
    if (node->is_leaf()) continue;
    if (!node->grad.empty() && node->adjoint) node->adjoint(*node);
    node->grad.clear();
    node->grad.shrink_to_fit();
  }
}

template <typename S>
void backward(const Tensor<S>& loss) {
  if (loss.numel() != 1) {
    throw UsageError("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
  }
  Graph<S>::record(loss).replay();
}

// ---- elementwise ----------------------------------------------------------

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  return binary(a, b, Binary::kAdd, "add");
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  return binary(a, b, Binary::kSub, "sub");
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  return binary(a, b, Binary::kMul, "mul");
}

template <typename S>
Tensor<S> scale(const Tensor<S>& a, S factor) {
  Buffer<S> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= factor;
  return make_result<S>("scale", a.shape(), std::move(out), {&a}, [factor](TensorNode<S>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * self.grad[i];
  });
}

template <typename S>
Tensor<S> sum(const Tensor<S>& a) {
  S total = S(0);
  for (S v : a.data()) total += v;
  return make_result<S>("sum", {}, {total}, {&a}, [](TensorNode<S>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (auto& v : g) v += self.grad[0];
  });
}

template <typename S>
Tensor<S> mean(const Tensor<S>& a, int axis) {
  const int ax = normalize_axis(axis, a.rank());
  const auto& shape = a.shape();
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < ax; ++i) outer *= shape[i];
  for (int i = ax + 1; i < a.rank(); ++i) inner *= shape[i];
  const std::int64_t len = shape[ax];
  Shape out_shape;
  for (int i = 0; i < a.rank(); ++i) {
    if (i != ax) out_shape.push_back(shape[i]);
  }
  Buffer<S> out(static_cast<std::size_t>(outer * inner), S(0));
  auto x = a.data();
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t j = 0; j < len; ++j) {
      for (std::int64_t i = 0; i < inner; ++i) out[o * inner + i] += x[(o * len + j) * inner + i];
    }
  }
  for (auto& v : out) v /= S(len);
  return make_result<S>("mean", std::move(out_shape), std::move(out), {&a},
                        [outer, inner, len](TensorNode<S>& self) {
                          auto& g = self.inputs[0]->grad_buffer();
                          for (std::int64_t o = 0; o < outer; ++o) {
                            for (std::int64_t j = 0; j < len; ++j) {
                              for (std::int64_t i = 0; i < inner; ++i) {
                                g[(o * len + j) * inner + i] += self.grad[o * inner + i] / S(len);
                              }
                            }
                          }
                        });
}

template <typename S>
Tensor<S> gelu(const Tensor<S>& x) {
  Buffer<S> out(x.data().size());
  gelu_forward(x.data().data(), out.data(), out.size());
  return make_result<S>("gelu", x.shape(), std::move(out), {&x}, [](TensorNode<S>& self) {
    auto& in = *self.inputs[0];
    gelu_backward(in.value.data(), self.grad.data(), in.grad_buffer().data(), self.grad.size());
  });
}

// ---- matrix products ------------------------------------------------------

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rank() < 2 || b.rank() < 2) {
    throw DimensionError("matmul: operands must have rank >= 2, got " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
  }
  const std::int64_t m = a.dim(-2), k = a.dim(-1);
  const std::int64_t n = b.dim(-1);
  const bool shared_rhs = b.rank() == 2;
  const Shape a_batch(a.shape().begin(), a.shape().end() - 2);
  const Shape b_batch(b.shape().begin(), b.shape().end() - 2);
  if (b.dim(-2) != k || (!shared_rhs && a_batch != b_batch)) {
    throw DimensionError("matmul: shape mismatch " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  const std::int64_t batch = numel(a_batch);
  Shape out_shape = a_batch;
  out_shape.push_back(m);
  out_shape.push_back(n);
  Buffer<S> out(static_cast<std::size_t>(batch * m * n));
  count_macs(static_cast<std::uint64_t>(batch * m * k * n));
  if (shared_rhs) {
    MatMap<S>(out.data(), batch * m, n).noalias() =
        ConstMatMap<S>(a.data().data(), batch * m, k) * ConstMatMap<S>(b.data().data(), k, n);
  } else {
    for (std::int64_t p = 0; p < batch; ++p) {
      MatMap<S>(out.data() + p * m * n, m, n).noalias() =
          ConstMatMap<S>(a.data().data() + p * m * k, m, k) *
          ConstMatMap<S>(b.data().data() + p * k * n, k, n);
    }
  }
  return make_result<S>("matmul", std::move(out_shape), std::move(out), {&a, &b},
                        [=](TensorNode<S>& self) {
                          auto& an = self.inputs[0];
                          auto& bn = self.inputs[1];
                          const S* g = self.grad.data();
                          if (shared_rhs) {
                            ConstMatMap<S> G(g, batch * m, n);
                            if (wants_grad(an)) {
                              MatMap<S>(an->grad_buffer().data(), batch * m, k).noalias() +=
                                  G * ConstMatMap<S>(bn->value.data(), k, n).transpose();
                            }
                            if (wants_grad(bn)) {
                              MatMap<S>(bn->grad_buffer().data(), k, n).noalias() +=
                                  ConstMatMap<S>(an->value.data(), batch * m, k).transpose() * G;
                            }
                            return;
                          }
                          for (std::int64_t p = 0; p < batch; ++p) {
                            ConstMatMap<S> G(g + p * m * n, m, n);
                            if (wants_grad(an)) {
                              MatMap<S>(an->grad_buffer().data() + p * m * k, m, k).noalias() +=
                                  G * ConstMatMap<S>(bn->value.data() + p * k * n, k, n).transpose();
                            }
                            if (wants_grad(bn)) {
                              MatMap<S>(bn->grad_buffer().data() + p * k * n, k, n).noalias() +=
                                  ConstMatMap<S>(an->value.data() + p * m * k, m, k).transpose() * G;
                            }
                          }
                        });
}

template <typename S>
Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& weight, const Tensor<S>& bias) {
  if (weight.rank() != 2 || x.rank() < 1 || x.dim(-1) != weight.dim(1)) {
    throw DimensionError("linear: input " + shape_str(x.shape()) + " incompatible with weight " +
                         shape_str(weight.shape()));
  }
  const std::int64_t in = weight.dim(1), out_dim = weight.dim(0);
  if (bias.defined() && bias.shape() != Shape{out_dim}) {
    throw DimensionError("linear: bias " + shape_str(bias.shape()) + " does not match weight " +
                         shape_str(weight.shape()));
  }
  const std::int64_t rows = x.numel() / in;
  Shape out_shape = x.shape();
  out_shape.back() = out_dim;
  Buffer<S> out(static_cast<std::size_t>(rows * out_dim));
  count_macs(static_cast<std::uint64_t>(rows * in * out_dim));
  MatMap<S> Y(out.data(), rows, out_dim);
  Y.noalias() = ConstMatMap<S>(x.data().data(), rows, in) *
                ConstMatMap<S>(weight.data().data(), out_dim, in).transpose();
  if (bias.defined()) {
    Y.rowwise() += Eigen::Map<const Eigen::Matrix<S, 1, Eigen::Dynamic>>(bias.data().data(), out_dim);
  }
  return make_result<S>("linear", std::move(out_shape), std::move(out), {&x, &weight, &bias},
                        [rows, in, out_dim](TensorNode<S>& self) {
                          auto& xn = self.inputs[0];
                          auto& wn = self.inputs[1];
                          auto& bn = self.inputs[2];
                          ConstMatMap<S> G(self.grad.data(), rows, out_dim);
                          if (wants_grad(xn)) {
                            MatMap<S>(xn->grad_buffer().data(), rows, in).noalias() +=
                                G * ConstMatMap<S>(wn->value.data(), out_dim, in);
                          }
                          if (wants_grad(wn)) {
                            MatMap<S>(wn->grad_buffer().data(), out_dim, in).noalias() +=
                                G.transpose() * ConstMatMap<S>(xn->value.data(), rows, in);
                          }
                          if (wants_grad(bn)) {
                            Eigen::Map<Eigen::Matrix<S, 1, Eigen::Dynamic>>(bn->grad_buffer().data(),
                                                                            out_dim) +=
                                G.colwise().sum();
                          }
                        });
}

// ---- normalization --------------------------------------------------------

template <typename S>
Tensor<S> softmax(const Tensor<S>& x, int axis) {
  const int ax = normalize_axis(axis, x.rank());
  const auto& shape = x.shape();
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < ax; ++i) outer *= shape[i];
  for (int i = ax + 1; i < x.rank(); ++i) inner *= shape[i];
  const std::int64_t len = shape[ax];
  if (len < 1) throw DimensionError("softmax over empty axis");
  check_finite<S>(x.data(), "softmax");
  auto xv = x.data();
  Buffer<S> out(xv.size());
  for (std::int64_t o = 0; o < outer; ++o) {
    if (inner == 1) {
      ConstArrayMap<S> row(xv.data() + o * len, len);
      ArrayMap<S> y(out.data() + o * len, len);
      y = (row - row.maxCoeff()).exp();
      y /= y.sum();
      continue;
    }
    for (std::int64_t i = 0; i < inner; ++i) {
      const std::int64_t base = o * len * inner + i;
      S peak = xv[base];
      for (std::int64_t j = 1; j < len; ++j) peak = std::max(peak, xv[base + j * inner]);
      S total = S(0);
      for (std::int64_t j = 0; j < len; ++j) {
        const S e = std::exp(xv[base + j * inner] - peak);
        out[base + j * inner] = e;
        total += e;
      }
      for (std::int64_t j = 0; j < len; ++j) out[base + j * inner] /= total;
    }
  }
  return make_result<S>("softmax", shape, std::move(out), {&x}, [outer, inner, len](TensorNode<S>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    const auto& y = self.value;
    const auto& dy = self.grad;
    for (std::int64_t o = 0; o < outer; ++o) {
      for (std::int64_t i = 0; i < inner; ++i) {
        const std::int64_t base = o * len * inner + i;
        S dot = S(0);
        for (std::int64_t j = 0; j < len; ++j) dot += dy[base + j * inner] * y[base + j * inner];
        for (std::int64_t j = 0; j < len; ++j) {
          const auto idx = base + j * inner;
          g[idx] += y[idx] * (dy[idx] - dot);
        }
      }
    }
  });
}

template <typename S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gain, const Tensor<S>& bias, S eps) {
  const std::int64_t d = x.dim(-1);
  if (gain.shape() != Shape{d} || bias.shape() != Shape{d}) {
    throw DimensionError("layer_norm: gain " + shape_str(gain.shape()) + " / bias " +
                         shape_str(bias.shape()) + " do not match input " + shape_str(x.shape()));
  }
  const std::int64_t rows = x.numel() / d;
  auto xv = x.data();
  auto gv = gain.data();
  auto bv = bias.data();
  Buffer<S> out(xv.size());
  // normalized activations and inverse deviations, kept for the adjoint
  auto xhat = std::make_shared<Buffer<S>>(xv.size());
  auto rstd = std::make_shared<Buffer<S>>(static_cast<std::size_t>(rows));
  for (std::int64_t r = 0; r < rows; ++r) {
    const S* row = xv.data() + r * d;
    S mu = S(0);
    for (std::int64_t j = 0; j < d; ++j) mu += row[j];
    mu /= S(d);
    S var = S(0);
    for (std::int64_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= S(d);
    const S inv = S(1) / std::sqrt(var + eps);
    (*rstd)[r] = inv;
    for (std::int64_t j = 0; j < d; ++j) {
      const S h = (row[j] - mu) * inv;
      (*xhat)[r * d + j] = h;
      out[r * d + j] = h * gv[j] + bv[j];
    }
  }
  return make_result<S>("layer_norm", x.shape(), std::move(out), {&x, &gain, &bias},
                        [rows, d, xhat, rstd](TensorNode<S>& self) {
                          auto& xn = self.inputs[0];
                          auto& gn = self.inputs[1];
                          auto& bn = self.inputs[2];
                          const auto& dy = self.grad;
                          if (wants_grad(gn) || wants_grad(bn)) {
                            auto* dg = wants_grad(gn) ? gn->grad_buffer().data() : nullptr;
                            auto* db = wants_grad(bn) ? bn->grad_buffer().data() : nullptr;
                            for (std::int64_t r = 0; r < rows; ++r) {
                              for (std::int64_t j = 0; j < d; ++j) {
                                const auto idx = r * d + j;
                                if (dg) dg[j] += dy[idx] * (*xhat)[idx];
                                if (db) db[j] += dy[idx];
                              }
                            }
                          }
                          if (!wants_grad(xn)) return;
                          auto& dx = xn->grad_buffer();
                          const auto& g = gn->value;
                          for (std::int64_t r = 0; r < rows; ++r) {
                            S mean_dh = S(0), mean_dh_h = S(0);
                            for (std::int64_t j = 0; j < d; ++j) {
                              const auto idx = r * d + j;
                              const S dh = dy[idx] * g[j];
                              mean_dh += dh;
                              mean_dh_h += dh * (*xhat)[idx];
                            }
                            mean_dh /= S(d);
                            mean_dh_h /= S(d);
                            for (std::int64_t j = 0; j < d; ++j) {
                              const auto idx = r * d + j;
                              const S dh = dy[idx] * g[j];
                              dx[idx] += (*rstd)[r] * (dh - mean_dh - (*xhat)[idx] * mean_dh_h);
                            }
                          }
                        });
}

// ---- shape manipulation ---------------------------------------------------

template <typename S>
Tensor<S> reshape(const Tensor<S>& x, Shape shape) {
  if (numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  Buffer<S> out(x.data().begin(), x.data().end());
  return make_result<S>("reshape", std::move(shape), std::move(out), {&x}, [](TensorNode<S>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

template <typename S>
Tensor<S> transpose(const Tensor<S>& x, int axis_a, int axis_b) {
  int a = normalize_axis(axis_a, x.rank());
  int b = normalize_axis(axis_b, x.rank());
  if (a > b) std::swap(a, b);
  const auto& shape = x.shape();
  // View as [P, A, Q, B, R] and emit [P, B, Q, A, R].
  std::int64_t P = 1, Q = 1, R = 1;
  for (int i = 0; i < a; ++i) P *= shape[i];
  for (int i = a + 1; i < b; ++i) Q *= shape[i];
  for (int i = b + 1; i < x.rank(); ++i) R *= shape[i];
  const std::int64_t A = shape[a], B = shape[b];
  Shape out_shape = shape;
  std::swap(out_shape[a], out_shape[b]);
  auto permute = [=](const S* src, S* dst, bool forward, bool accumulate) {
    for (std::int64_t p = 0; p < P; ++p)
      for (std::int64_t ia = 0; ia < A; ++ia)
        for (std::int64_t q = 0; q < Q; ++q)
          for (std::int64_t ib = 0; ib < B; ++ib) {
            const std::int64_t in_off = ((((p * A + ia) * Q + q) * B + ib) * R);
            const std::int64_t out_off = ((((p * B + ib) * Q + q) * A + ia) * R);
            const S* s = src + (forward ? in_off : out_off);
            S* t = dst + (forward ? out_off : in_off);
            if (accumulate) {
              for (std::int64_t r = 0; r < R; ++r) t[r] += s[r];
            } else {
              std::copy(s, s + R, t);
            }
          }
  };
  Buffer<S> out(x.data().size());
  permute(x.data().data(), out.data(), true, false);
  return make_result<S>("transpose", std::move(out_shape), std::move(out), {&x},
                        [permute](TensorNode<S>& self) {
                          permute(self.grad.data(), self.inputs[0]->grad_buffer().data(), false, true);
                        });
}

template <typename S>
Tensor<S> gather_rows(const Tensor<S>& x, const std::vector<std::vector<std::int64_t>>& index) {
  if (x.rank() != 2 && x.rank() != 3) {
    throw DimensionError("gather_rows: expected rank 2 or 3, got " + shape_str(x.shape()));
  }
  const bool batched = x.rank() == 3;
  const std::int64_t batch = batched ? x.dim(0) : 1;
  const std::int64_t rows = x.dim(-2), d = x.dim(-1);
  if (static_cast<std::int64_t>(index.size()) != batch) {
    throw DimensionError("gather_rows: " + std::to_string(index.size()) +
                         " index lists for input " + shape_str(x.shape()));
  }
  const auto picked = static_cast<std::int64_t>(index.empty() ? 0 : index[0].size());
  for (const auto& list : index) {
    if (static_cast<std::int64_t>(list.size()) != picked) {
      throw DimensionError("gather_rows: index lists must have equal length");
    }
    for (auto r : list) {
      if (r < 0 || r >= rows) throw InputError("gather_rows: row " + std::to_string(r) + " out of range");
    }
  }
  Shape out_shape = batched ? Shape{batch, picked, d} : Shape{picked, d};
  Buffer<S> out(static_cast<std::size_t>(batch * picked * d));
  auto xv = x.data();
  for (std::int64_t b = 0; b < batch; ++b) {
    for (std::int64_t t = 0; t < picked; ++t) {
      const S* src = xv.data() + (b * rows + index[b][t]) * d;
      std::copy(src, src + d, out.data() + (b * picked + t) * d);
    }
  }
  return make_result<S>("gather_rows", std::move(out_shape), std::move(out), {&x},
                        [index, batch, rows, picked, d](TensorNode<S>& self) {
                          auto& g = self.inputs[0]->grad_buffer();
                          for (std::int64_t b = 0; b < batch; ++b) {
                            for (std::int64_t t = 0; t < picked; ++t) {
                              const S* src = self.grad.data() + (b * picked + t) * d;
                              S* dst = g.data() + (b * rows + index[b][t]) * d;
                              for (std::int64_t j = 0; j < d; ++j) dst[j] += src[j];
                            }
                          }
                        });
}

template <typename S>
Tensor<S> weighted_row_sum(const Tensor<S>& x, const std::vector<std::vector<S>>& weights) {
  if (x.rank() != 2 && x.rank() != 3) {
    throw DimensionError("weighted_row_sum: expected rank 2 or 3, got " + shape_str(x.shape()));
  }
  const bool batched = x.rank() == 3;
  const std::int64_t batch = batched ? x.dim(0) : 1;
  const std::int64_t rows = x.dim(-2), d = x.dim(-1);
  if (static_cast<std::int64_t>(weights.size()) != batch) {
    throw DimensionError("weighted_row_sum: weight lists do not match input " + shape_str(x.shape()));
  }
  for (const auto& w : weights) {
    if (static_cast<std::int64_t>(w.size()) != rows) {
      throw DimensionError("weighted_row_sum: weight list length differs from row count");
    }
  }
  Shape out_shape = batched ? Shape{batch, 1, d} : Shape{1, d};
  Buffer<S> out(static_cast<std::size_t>(batch * d), S(0));
  auto xv = x.data();
  for (std::int64_t b = 0; b < batch; ++b) {
    for (std::int64_t t = 0; t < rows; ++t) {
      const S w = weights[b][t];
      if (w == S(0)) continue;
      const S* src = xv.data() + (b * rows + t) * d;
      for (std::int64_t j = 0; j < d; ++j) out[b * d + j] += w * src[j];
    }
  }
  return make_result<S>("weighted_row_sum", std::move(out_shape), std::move(out), {&x},
                        [weights, batch, rows, d](TensorNode<S>& self) {
                          auto& g = self.inputs[0]->grad_buffer();
                          for (std::int64_t b = 0; b < batch; ++b) {
                            for (std::int64_t t = 0; t < rows; ++t) {
                              const S w = weights[b][t];
                              S* dst = g.data() + (b * rows + t) * d;
                              for (std::int64_t j = 0; j < d; ++j) dst[j] += w * self.grad[b * d + j];
                            }
                          }
                        });
}

template <typename S>
Tensor<S> concat_rows(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2)) {
    throw DimensionError("concat_rows: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  const std::int64_t batch = a.dim(0), ta = a.dim(1), tb = b.dim(1), d = a.dim(2);
  Buffer<S> out(static_cast<std::size_t>(batch * (ta + tb) * d));
  for (std::int64_t p = 0; p < batch; ++p) {
    std::copy_n(a.data().data() + p * ta * d, ta * d, out.data() + p * (ta + tb) * d);
    std::copy_n(b.data().data() + p * tb * d, tb * d, out.data() + (p * (ta + tb) + ta) * d);
  }
  return make_result<S>("concat_rows", {batch, ta + tb, d}, std::move(out), {&a, &b},
                        [batch, ta, tb, d](TensorNode<S>& self) {
                          auto& an = self.inputs[0];
                          auto& bn = self.inputs[1];
                          for (std::int64_t p = 0; p < batch; ++p) {
                            const S* g = self.grad.data() + p * (ta + tb) * d;
                            if (wants_grad(an)) {
                              S* dst = an->grad_buffer().data() + p * ta * d;
                              for (std::int64_t j = 0; j < ta * d; ++j) dst[j] += g[j];
                            }
                            if (wants_grad(bn)) {
                              S* dst = bn->grad_buffer().data() + p * tb * d;
                              for (std::int64_t j = 0; j < tb * d; ++j) dst[j] += g[ta * d + j];
                            }
                          }
                        });
}

template <typename S>
Tensor<S> expand_batch(const Tensor<S>& x, std::int64_t batch) {
  const auto n = x.data().size();
  Buffer<S> out;
  out.reserve(n * static_cast<std::size_t>(batch));
  for (std::int64_t p = 0; p < batch; ++p) out.insert(out.end(), x.data().begin(), x.data().end());
  Shape shape{batch};
  shape.insert(shape.end(), x.shape().begin(), x.shape().end());
  return make_result<S>("expand_batch", std::move(shape), std::move(out), {&x}, [n](TensorNode<S>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % n] += self.grad[i];
  });
}

// ---- loss -----------------------------------------------------------------

template <typename S>
Tensor<S> cross_entropy(const Tensor<S>& logits, std::span<const std::int64_t> labels) {
  if (logits.rank() != 2 || logits.dim(0) != static_cast<std::int64_t>(labels.size())) {
    throw DimensionError("cross_entropy: logits " + shape_str(logits.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
  }
  const std::int64_t batch = logits.dim(0), classes = logits.dim(1);
  for (auto y : labels) {
    if (y < 0 || y >= classes) {
      throw InputError("cross_entropy: label " + std::to_string(y) + " outside [0," +
                       std::to_string(classes) + ")");
    }
  }
  auto z = logits.data();
  auto probs = std::make_shared<Buffer<S>>(z.size());
  S total = S(0);
  for (std::int64_t b = 0; b < batch; ++b) {
    const S* row = z.data() + b * classes;
    const S peak = *std::max_element(row, row + classes);
    S norm = S(0);
    for (std::int64_t c = 0; c < classes; ++c) norm += std::exp(row[c] - peak);
    const S log_norm = std::log(norm) + peak;
    for (std::int64_t c = 0; c < classes; ++c) (*probs)[b * classes + c] = std::exp(row[c] - log_norm);
    total += log_norm - row[labels[b]];
  }
  std::vector<std::int64_t> label_copy(labels.begin(), labels.end());
  return make_result<S>("cross_entropy", {}, {total / S(batch)}, {&logits},
                        [probs, label_copy, batch, classes](TensorNode<S>& self) {
                          auto& g = self.inputs[0]->grad_buffer();
                          const S upstream = self.grad[0] / S(batch);
                          for (std::int64_t b = 0; b < batch; ++b) {
                            for (std::int64_t c = 0; c < classes; ++c) {
                              const S onehot = c == label_copy[b] ? S(1) : S(0);
                              g[b * classes + c] += upstream * ((*probs)[b * classes + c] - onehot);
                            }
                          }
                        });
}

// ---- instantiations -------------------------------------------------------

#define TRPTS_INSTANTIATE(S)                                                                   \
  template struct TensorNode<S>;                                                               \
  template class Tensor<S>;                                                                    \
  template class Graph<S>;                                                                     \
  template void backward<S>(const Tensor<S>&);                                                 \
  template Tensor<S> add<S>(const Tensor<S>&, const Tensor<S>&);                               \
  template Tensor<S> sub<S>(const Tensor<S>&, const Tensor<S>&);                               \
  template Tensor<S> mul<S>(const Tensor<S>&, const Tensor<S>&);                               \
  template Tensor<S> scale<S>(const Tensor<S>&, S);                                            \
  template Tensor<S> sum<S>(const Tensor<S>&);                                                 \
  template Tensor<S> mean<S>(const Tensor<S>&, int);                                           \
  template Tensor<S> matmul<S>(const Tensor<S>&, const Tensor<S>&);                            \
  template Tensor<S> linear<S>(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&);          \
  template Tensor<S> gelu<S>(const Tensor<S>&);                                                \
  template Tensor<S> softmax<S>(const Tensor<S>&, int);                                        \
  template Tensor<S> layer_norm<S>(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, S);   \
  template Tensor<S> reshape<S>(const Tensor<S>&, Shape);                                      \
  template Tensor<S> transpose<S>(const Tensor<S>&, int, int);                                 \
  template Tensor<S> gather_rows<S>(const Tensor<S>&,                                          \
                                    const std::vector<std::vector<std::int64_t>>&);            \
  template Tensor<S> weighted_row_sum<S>(const Tensor<S>&, const std::vector<std::vector<S>>&); \
  template Tensor<S> concat_rows<S>(const Tensor<S>&, const Tensor<S>&);                       \
  template Tensor<S> expand_batch<S>(const Tensor<S>&, std::int64_t);                          \
  template Tensor<S> cross_entropy<S>(const Tensor<S>&, std::span<const std::int64_t>);

TRPTS_INSTANTIATE(float)
TRPTS_INSTANTIATE(double)

#undef TRPTS_INSTANTIATE

}  // namespace trpts
