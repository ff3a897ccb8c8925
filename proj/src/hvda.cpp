// SPDX-License-Identifier: Apache-2.0
#include "rdte/hvda.hpp"

#include <cmath>

#include "rdte/errors.hpp"

namespace rdte {

namespace {

void check_map(const Var& x, std::size_t channels, std::size_t hw_cap, const std::string& who) {
  if (x.value().rank() != 4 || x.dim(3) != channels)
    throw ShapeError(who + ": expected N,H,W," + std::to_string(channels) + " input, got " + shape_str(x.shape()));
  const std::size_t hw = x.dim(1) * x.dim(2);
  if (hw > hw_cap)
    throw ConfigError(who + ": attention over " + std::to_string(hw) + " positions exceeds the cap of " +
                      std::to_string(hw_cap) + "; use it only at the deepest encoder stages");
}

}  // namespace

Var spatial_attention(const Var& q, const Var& k, const Var& v, real factor, std::vector<Tensor>* maps) {
  if (q.value().rank() != 4 || !q.value().same_shape(k.value()) || v.value().rank() != 4 ||
      v.dim(0) != q.dim(0) || v.dim(1) != q.dim(1) || v.dim(2) != q.dim(2))
    throw ShapeError("spatial_attention: incompatible q " + shape_str(q.shape()) + ", k " + shape_str(k.shape()) +
                     ", v " + shape_str(v.shape()));
  const std::size_t n = q.dim(0), h = q.dim(1), w = q.dim(2), d = q.dim(3), c = v.dim(3);
  const std::size_t hw = h * w;
  std::vector<Var> outs;
  for (std::size_t i = 0; i < n; ++i) {
    Var qi = reshape(select_first(q, i), {hw, d});
    Var ki = reshape(select_first(k, i), {hw, d});
    Var vi = reshape(select_first(v, i), {hw, c});
    Var logits = matmul_nt(qi, ki);
    if (factor != 1) logits = scale(logits, factor);
    Var b = softmax_rows(logits);
    if (maps) maps->push_back(b.value());
    outs.push_back(reshape(matmul(b, vi), {1, h, w, c}));
  }
  return outs.size() == 1 ? outs[0] : concat_first(outs);
}

StairConv HvdaBranch::stair_h() const { return {name + ".hd", StairAxis::horizontal, k, channels, channels}; }
StairConv HvdaBranch::stair_v() const { return {name + ".vd", StairAxis::vertical, k, channels, channels}; }

void HvdaBranch::init(ParamStore& store, Rng& rng) const {
  stair_h().init(store, rng);
  stair_v().init(store, rng);
  Conv2d{name + ".reduce", Conv2dSpec::valid(1, 1, 2 * channels, channels), false}.init(store, rng);
  BatchNorm{name + ".reduce_bn", channels}.init(store);
  Conv2d{name + ".deep", Conv2dSpec::same(3, 3, channels, channels), false}.init(store, rng);
  BatchNorm{name + ".deep_bn", channels}.init(store);
}

Var HvdaBranch::operator()(Context& ctx, const Var& x) const {
  Var hd = stair_h()(ctx, x);
  Var vd = stair_v()(ctx, x);
  Var skip = add(hd, vd);
  Conv2d reduce{name + ".reduce", Conv2dSpec::valid(1, 1, 2 * channels, channels), false};
  Var cat = add(relu(BatchNorm{name + ".reduce_bn", channels}(ctx, reduce(ctx, concat_last({hd, vd})))), skip);
  Conv2d deep{name + ".deep", Conv2dSpec::same(3, 3, channels, channels), false};
  Var inner = add(BatchNorm{name + ".deep_bn", channels}(ctx, deep(ctx, cat)), cat);
  return add(relu(inner), skip);
}

HvdaBranch Hvda::branch(int which) const {
  static const char* tags[] = {".q", ".k", ".v"};
  return {name + (shared_branches ? std::string(".qkv") : std::string(tags[which])), channels, k};
}

Conv2d Hvda::proj_q() const { return {name + ".proj_q", Conv2dSpec::valid(1, 1, channels, 1)}; }
// No bias: a key offset adds a constant to each softmax row and has no effect.
Conv2d Hvda::proj_k() const { return {name + ".proj_k", Conv2dSpec::valid(1, 1, channels, 1), false}; }
Conv2d Hvda::proj_v() const { return {name + ".proj_v", Conv2dSpec::valid(1, 1, channels, channels)}; }

void Hvda::init(ParamStore& store, Rng& rng) const {
  for (int i = 0; i < (shared_branches ? 1 : 3); ++i) branch(i).init(store, rng);
  proj_q().init(store, rng);
  proj_k().init(store, rng);
  proj_v().init(store, rng);
}

Var Hvda::forward(Context& ctx, const Var& x, std::vector<Tensor>* maps) const {
  check_map(x, channels, hw_cap, name);
  Var fq = branch(0)(ctx, x);
  Var fk = shared_branches ? fq : branch(1)(ctx, x);
  Var fv = shared_branches ? fq : branch(2)(ctx, x);
  Var y = spatial_attention(proj_q()(ctx, fq), proj_k()(ctx, fk), proj_v()(ctx, fv), 1, maps);
  return residual ? add(y, x) : y;
}

namespace {

// As in Hvda, the key projection has no bias.
Conv2d plain_proj(const std::string& name, const char* p, std::size_t channels) {
  return {name + p, Conv2dSpec::valid(1, 1, channels, channels), std::string(p) != ".k"};
}

}  // namespace

void PlainAttention::init(ParamStore& store, Rng& rng) const {
  for (const char* p : {".q", ".k", ".v"}) plain_proj(name, p, channels).init(store, rng);
}

Var PlainAttention::operator()(Context& ctx, const Var& x) const {
  check_map(x, channels, hw_cap, name);
  auto proj = [&](const char* p) { return plain_proj(name, p, channels)(ctx, x); };
  return spatial_attention(proj(".q"), proj(".k"), proj(".v"), real(1 / std::sqrt(double(channels))));
}

Hvda DetailsTransformer::hvda(int i) const { return {sub(i) + ".hvda", channels, k, 4096, false}; }
PlainAttention DetailsTransformer::plain(int i) const { return {sub(i) + ".attn", channels}; }
Mlp DetailsTransformer::mlp(int i) const { return {sub(i) + ".mlp", channels}; }

void DetailsTransformer::init(ParamStore& store, Rng& rng) const {
  for (int i = 0; i < 2; ++i) {
    LayerNorm{sub(i) + ".ln1", channels}.init(store);
    if (plain_attention)
      plain(i).init(store, rng);
    else
      hvda(i).init(store, rng);
    LayerNorm{sub(i) + ".ln2", channels}.init(store);
    mlp(i).init(store, rng);
  }
}

Var DetailsTransformer::operator()(Context& ctx, const Var& x) const {
  Var y = x;
  for (int i = 0; i < 2; ++i) {
    Var a = LayerNorm{sub(i) + ".ln1", channels}(ctx, y);
    y = add(y, plain_attention ? plain(i)(ctx, a) : hvda(i)(ctx, a));
    y = add(y, mlp(i)(ctx, LayerNorm{sub(i) + ".ln2", channels}(ctx, y)));
  }
  return y;
}

}  // namespace rdte
