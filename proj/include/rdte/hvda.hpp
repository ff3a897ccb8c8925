// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "rdte/nn.hpp"
#include "rdte/stairconv.hpp"

namespace rdte {

/// Per-sample dot-product attention over spatial positions.
/// q, k: N,h,w,d; v: N,h,w,c. For each sample, B = softmax_rows(factor * Q K^T)
/// with Q, K as hw x d matrices, and the result is B V reshaped to N,h,w,c.
/// When `maps` is given, the hw x hw matrices B are appended to it.
Var spatial_attention(const Var& q, const Var& k, const Var& v, real factor = 1,
                      std::vector<Tensor>* maps = nullptr);

/// Horizontal and vertical StairConv features merged by two residual stages:
///   x_cat    = ReLU(BN(conv1x1([x_hd, x_vd]))) + x_hd + x_vd
///   x_fusion = ReLU(BN(conv3x3(x_cat)) + x_cat) + x_hd + x_vd
struct HvdaBranch {
  std::string name;
  std::size_t channels = 1;
  std::size_t k = 3;

  StairConv stair_h() const;
  StairConv stair_v() const;
  void init(ParamStore& store, Rng& rng) const;
  Var operator()(Context& ctx, const Var& x) const;
};

/// Three branches feed Q and K (1x1 conv to one channel) and V (1x1 conv
/// c -> c); the output is the attention of V under B = softmax(Q K^T).
struct Hvda {
  std::string name;
  std::size_t channels = 1;
  std::size_t k = 3;
  /// Largest h*w accepted; bounds the hw x hw attention map.
  std::size_t hw_cap = 4096;
  /// Adds x to the output. The transformer block does its own residual.
  bool residual = true;
  /// One branch instance shared by Q, K and V.
  bool shared_branches = false;

  HvdaBranch branch(int which) const;  // 0: Q, 1: K, 2: V
  Conv2d proj_q() const;
  Conv2d proj_k() const;
  Conv2d proj_v() const;
  void init(ParamStore& store, Rng& rng) const;
  Var forward(Context& ctx, const Var& x, std::vector<Tensor>* maps = nullptr) const;
  Var operator()(Context& ctx, const Var& x) const { return forward(ctx, x); }
};

/// Plain spatial self-attention with Q, K, V from 1x1 convs on x (the
/// attention used when HVDA is ablated).
struct PlainAttention {
  std::string name;
  std::size_t channels = 1;
  std::size_t hw_cap = 4096;

  void init(ParamStore& store, Rng& rng) const;
  Var operator()(Context& ctx, const Var& x) const;
};

/// Two chained submodules, each x += Attn(LN(x)); x += MLP(LN(x)).
struct DetailsTransformer {
  std::string name;
  std::size_t channels = 1;
  std::size_t k = 3;
  /// Use PlainAttention in place of HVDA.
  bool plain_attention = false;

  std::string sub(int i) const { return name + ".s" + std::to_string(i); }
  Hvda hvda(int i) const;
  PlainAttention plain(int i) const;
  Mlp mlp(int i) const;
  void init(ParamStore& store, Rng& rng) const;
  Var operator()(Context& ctx, const Var& x) const;
};

}  // namespace rdte
