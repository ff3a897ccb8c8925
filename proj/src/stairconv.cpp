// SPDX-License-Identifier: Apache-2.0
#include "rdte/stairconv.hpp"

#include "rdte/errors.hpp"

namespace rdte {

namespace {

struct Pads {
  std::size_t top, bottom, left, right;
};

Pads stair_pads(StairAxis axis, int level, StairSide side, std::size_t k) {
  if (level != 1 && level != 2) throw ConfigError("stair level must be 1 or 2");
  if (k == 0) throw ConfigError("stair kernel extent must be positive");
  const std::size_t total = std::size_t(level) * k;
  const std::size_t lo = total / 2, hi = total - total / 2;
  const bool first = side == StairSide::first;
  if (axis == StairAxis::horizontal) return {lo, hi, first ? 0 : total, first ? total : 0};
  return {first ? total : 0, first ? 0 : total, lo, hi};
}

constexpr int kLevels[] = {1, 2};
constexpr StairSide kSides[] = {StairSide::first, StairSide::second};

}  // namespace

Var stair_pad(const Var& x, StairAxis axis, int level, StairSide side, std::size_t k) {
  const Pads p = stair_pads(axis, level, side, k);
  return pad2d(x, p.top, p.bottom, p.left, p.right);
}

Conv2dSpec stair_branch_spec(StairAxis axis, int level, StairSide side, std::size_t k,
                             std::size_t c_in, std::size_t c_out) {
  const Pads p = stair_pads(axis, level, side, k);
  Conv2dSpec s = Conv2dSpec::valid(std::size_t(level) * k, std::size_t(level) * k, c_in, c_out);
  s.pad_top = p.top;
  s.pad_bottom = p.bottom;
  s.pad_left = p.left;
  s.pad_right = p.right;
  return s;
}

std::string StairConv::branch_name(int level, StairSide side) const {
  return name + ".b" + std::to_string(level) + (side == StairSide::first ? "a" : "b");
}

void StairConv::init(ParamStore& store, Rng& rng) const {
  for (int level : kLevels)
    for (StairSide side : kSides) {
      const std::string b = branch_name(level, side);
      Conv2d{b + ".conv", stair_branch_spec(axis, level, side, k, c_in, c_branch()), false}.init(store, rng);
      BatchNorm{b + ".bn", c_branch()}.init(store);
    }
  Conv2d{name + ".fuse.conv", Conv2dSpec::valid(2, 2, 4 * c_branch(), c_out), false}.init(store, rng);
  BatchNorm{name + ".fuse.bn", c_out}.init(store);
}

Var StairConv::features(Context& ctx, const Var& x) const {
  if (x.value().rank() != 4 || x.dim(3) != c_in)
    throw ShapeError(name + ": expected N,H,W," + std::to_string(c_in) + " input, got " + shape_str(x.shape()));
  if (x.dim(1) < 2 || x.dim(2) < 2)
    throw ShapeError(name + ": spatial extents must be at least 2, got " + shape_str(x.shape()));
  std::vector<Var> parts;
  for (int level : kLevels)
    for (StairSide side : kSides) {
      const std::string b = branch_name(level, side);
      Conv2d conv{b + ".conv", stair_branch_spec(axis, level, side, k, c_in, c_branch()), false};
      parts.push_back(silu(BatchNorm{b + ".bn", c_branch()}(ctx, conv(ctx, x))));
    }
  return concat_last(parts);
}

Var StairConv::operator()(Context& ctx, const Var& x) const {
  Conv2d fuse{name + ".fuse.conv", Conv2dSpec::valid(2, 2, 4 * c_branch(), c_out), false};
  return silu(BatchNorm{name + ".fuse.bn", c_out}(ctx, fuse(ctx, features(ctx, x))));
}

}  // namespace rdte
