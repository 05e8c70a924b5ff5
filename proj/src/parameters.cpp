// Copyright 2026 The TR-PTS Authors
// SPDX-License-Identifier: Apache-2.0

#include "trpts/parameters.hpp"

#include "trpts/error.hpp"

namespace trpts {

std::int64_t total_numel(const ParamLayout& layout) {
  std::int64_t n = 0;
  for (const auto& p : layout) n += p.numel();
  return n;
}

void require_congruent(const ParamLayout& a, const ParamLayout& b, const char* what) {
  if (a.size() != b.size()) {
    throw InputError(std::string(what) + ": registries differ in size (" + std::to_string(a.size()) +
                     " vs " + std::to_string(b.size()) + ")");
  }
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!(a[i] == b[i])) {
      throw InputError(std::string(what) + ": parameter '" + a[i].name + "' " + shape_str(a[i].shape) +
                       " does not match '" + b[i].name + "' " + shape_str(b[i].shape));
    }
  }
}

template <typename S>
void ParameterRegistry<S>::add(int layer, std::string name, Tensor<S> tensor) {
  if (find(name)) throw UsageError("duplicate parameter name '" + name + "'");
  params_.push_back({ParamInfo{layer, std::move(name), tensor.shape()}, std::move(tensor)});
}

template <typename S>
const Parameter<S>* ParameterRegistry<S>::find(const std::string& name) const {
  for (const auto& p : params_) {
    if (p.info.name == name) return &p;
  }
  return nullptr;
}

template <typename S>
Parameter<S>* ParameterRegistry<S>::find(const std::string& name) {
  for (auto& p : params_) {
    if (p.info.name == name) return &p;
  }
  return nullptr;
}

template <typename S>
const Parameter<S>& ParameterRegistry<S>::at(const std::string& name) const {
  const auto* p = find(name);
  if (!p) throw InputError("no parameter named '" + name + "'");
  return *p;
}

template <typename S>
ParamLayout ParameterRegistry<S>::layout() const {
  ParamLayout layout;
  layout.reserve(params_.size());
  for (const auto& p : params_) layout.push_back(p.info);
  return layout;
}

template <typename S>
std::int64_t ParameterRegistry<S>::total_numel() const {
  std::int64_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

template <typename S>
void ParameterRegistry<S>::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

template <typename S>
void ParameterRegistry<S>::set_requires_grad(bool on) {
  for (auto& p : params_) p.tensor.set_requires_grad(on);
}

template class ParameterRegistry<float>;
template class ParameterRegistry<double>;

}  // namespace trpts
