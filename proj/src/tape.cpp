// SPDX-License-Identifier: Apache-2.0
#include "rdte/tape.hpp"

#include <algorithm>

#include "rdte/errors.hpp"

namespace rdte {

const Tensor& Var::value() const {
  if (!tape_) throw ContractError("use of an unbound Var");
  return tape_->value(id_);
}

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, int(nodes_.size() - 1));
}

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::leaf(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = recording_;
  return push(std::move(n));
}

Var Tape::param(ParamStore& store, const std::string& name) {
  Param& p = store.get(name);
  if (auto it = param_ids_.find(&p); it != param_ids_.end()) return Var(this, it->second);
  Node n;
  n.value = p.value;
  n.requires_grad = recording_ && p.trainable;
  n.param = &p;
  Var v = push(std::move(n));
  param_ids_.emplace(&p, v.id());
  return v;
}

Var Tape::record(Tensor value, const std::vector<Var>& inputs, BackwardFn fn) {
  Node n;
  n.value = std::move(value);
  if (recording_) {
    for (const auto& in : inputs) {
      if (&in.tape() != this) throw ContractError("op inputs recorded on different tapes");
      n.inputs.push_back(in.id());
      n.requires_grad = n.requires_grad || requires_grad(in.id());
    }
    if (n.requires_grad) n.backward = std::move(fn);
  }
  return push(std::move(n));
}

Tensor& Tape::grad(int id) {
  Node& n = nodes_.at(std::size_t(id));
  if (n.grad.empty()) n.grad = Tensor::zeros(n.value.shape());
  return n.grad;
}

void Tape::backward(const Var& loss) {
  if (&loss.tape() != this) throw ContractError("loss belongs to another tape");
  if (loss.value().size() != 1)
    throw ContractError("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
  if (!recording_) throw ContractError("backward on a non-recording tape");
  if (backward_done_) throw ContractError("backward already ran on this tape");
  backward_done_ = true;
  grad(loss.id())[0] = real(1);
  for (int id = loss.id(); id >= 0; --id) {
    Node& n = nodes_[std::size_t(id)];
    if (!n.backward || n.grad.empty()) continue;
    // Rules only write grads of earlier entries, so n.grad stays stable.
    n.backward(*this, n.grad);
  }
}

void Tape::flush_param_grads() {
  for (auto& n : nodes_) {
    if (!n.param || n.grad.empty()) continue;
    auto dst = n.param->grad.data();
    auto src = n.grad.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }
}

void backward(Tape& tape, const Var& loss, ParamStore& params) {
  params.zero_grad();
  tape.backward(loss);
  tape.flush_param_grads();
}

}  // namespace rdte
