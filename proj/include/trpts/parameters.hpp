// Copyright 2026 The TR-PTS Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "trpts/tensor.hpp"

namespace trpts {

/// Stable identity of one parameter tensor. layer is the transformer block
/// index, or -1 for parameters outside the blocks.
struct ParamInfo {
  int layer = -1;
  std::string name;
  Shape shape;

  std::int64_t numel() const { return trpts::numel(shape); }
  bool operator==(const ParamInfo&) const = default;
};

using ParamLayout = std::vector<ParamInfo>;

std::int64_t total_numel(const ParamLayout& layout);
/// Throws InputError naming the first difference.
void require_congruent(const ParamLayout& a, const ParamLayout& b, const char* what);

template <typename S>
struct Parameter {
  ParamInfo info;
  Tensor<S> tensor;
};

/// Ordered collection of a model's trainable tensors.
template <typename S>
class ParameterRegistry {
 public:
  void add(int layer, std::string name, Tensor<S> tensor);

  std::size_t size() const { return params_.size(); }
  Parameter<S>& operator[](std::size_t i) { return params_[i]; }
  const Parameter<S>& operator[](std::size_t i) const { return params_[i]; }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  const Parameter<S>* find(const std::string& name) const;
  Parameter<S>* find(const std::string& name);
  const Parameter<S>& at(const std::string& name) const;

  ParamLayout layout() const;
  std::int64_t total_numel() const;
  void zero_grad();
  void set_requires_grad(bool on);

 private:
  std::vector<Parameter<S>> params_;
};

}  // namespace trpts
