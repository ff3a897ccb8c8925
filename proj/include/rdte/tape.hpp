// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <deque>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "rdte/param_store.hpp"
#include "rdte/tensor.hpp"

namespace rdte {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t dim(std::size_t i) const { return value().dim(i); }
  Tape& tape() const { return *tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

/// Reverse-mode record of one forward pass. Entries are appended in
/// evaluation order, so inputs always precede outputs; backward walks the
/// entries once in reverse. A tape is single-threaded and meant to be
/// discarded after backward.
class Tape {
 public:
  /// Receives the gradient of the entry's output and accumulates into inputs.
  using BackwardFn = std::function<void(Tape&, const Tensor& grad_out)>;

  /// With `recording` off no backward rules are kept (inference).
  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }

  Var constant(Tensor value);
  /// Differentiable input; its gradient is read back with grad().
  Var leaf(Tensor value);
  /// Leaf bound to a ParamStore entry. Repeated calls for the same entry
  /// return the same Var.
  Var param(ParamStore& store, const std::string& name);

  /// Append an op output. `fn` is dropped when no input requires a gradient.
  Var record(Tensor value, const std::vector<Var>& inputs, BackwardFn fn);

  const Tensor& value(int id) const { return nodes_.at(std::size_t(id)).value; }
  bool requires_grad(int id) const { return nodes_.at(std::size_t(id)).requires_grad; }
  bool requires_grad(const Var& v) const { return requires_grad(v.id()); }
  /// Gradient buffer of an entry, zero-allocated on first use.
  Tensor& grad(int id);
  Tensor& grad(const Var& v) { return grad(v.id()); }
  bool has_grad(int id) const { return !nodes_.at(std::size_t(id)).grad.empty(); }

  /// Seeds d(loss)/d(loss) = 1 and runs every recorded rule once, newest first.
  void backward(const Var& loss);

  /// Adds gradients of parameter leaves into their ParamStore entries.
  void flush_param_grads();

  std::size_t size() const { return nodes_.size(); }
  /// Id the next recorded entry will receive; lets a rule refer to its own output.
  int next_id() const { return int(nodes_.size()); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::vector<int> inputs;
    BackwardFn backward;
    Param* param = nullptr;
  };

  Var push(Node node);

  bool recording_;
  bool backward_done_ = false;
  std::deque<Node> nodes_;
  std::unordered_map<const Param*, int> param_ids_;
};

/// Zeroes every grad in `params`, backpropagates `loss` (must be a single
/// element) and writes d(loss)/d(param) into the store.
void backward(Tape& tape, const Var& loss, ParamStore& params);

}  // namespace rdte
