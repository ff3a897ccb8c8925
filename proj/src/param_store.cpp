// SPDX-License-Identifier: Apache-2.0
#include "rdte/param_store.hpp"

#include <algorithm>

#include "rdte/errors.hpp"

namespace rdte {

Param& ParamStore::add(const std::string& name, Tensor value, bool trainable) {
  if (name.empty()) throw ContractError("parameter name must be non-empty");
  if (params_.count(name)) throw ContractError("duplicate parameter name: " + name);
  Param p;
  p.grad = Tensor::zeros(value.shape());
  p.value = std::move(value);
  p.trainable = trainable;
  return params_.emplace(name, std::move(p)).first->second;
}

Param& ParamStore::get(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw NotFoundError("no parameter named " + name);
  return it->second;
}

const Param& ParamStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw NotFoundError("no parameter named " + name);
  return it->second;
}

void ParamStore::zero_grad() {
  for (auto& [_, p] : params_) std::fill(p.grad.data().begin(), p.grad.data().end(), real(0));
}

std::size_t ParamStore::scalar_count(bool all) const {
  std::size_t n = 0;
  for (const auto& [_, p] : params_)
    if (all || p.trainable) n += p.value.size();
  return n;
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(params_.size());
  for (const auto& [name, _] : params_) out.push_back(name);
  return out;
}

}  // namespace rdte
