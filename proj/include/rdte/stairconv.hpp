// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "rdte/nn.hpp"

namespace rdte {

enum class StairAxis { horizontal, vertical };

/// `first` is right (horizontal) or up (vertical); `second` is left or down.
enum class StairSide { first, second };

/// Zero padding for one stair branch. Along the shift axis all level*k zeros
/// go on `side`; the orthogonal axis gets floor(level*k/2) before and the
/// rest after.
Var stair_pad(const Var& x, StairAxis axis, int level, StairSide side, std::size_t k);

/// The padding of stair_pad expressed as a convolution spec with a
/// (level*k) x (level*k) kernel.
Conv2dSpec stair_branch_spec(StairAxis axis, int level, StairSide side, std::size_t k,
                             std::size_t c_in, std::size_t c_out);

/// Four shifted branches (two scales, two sides), each conv -> BN -> SiLU
/// producing (h+1) x (w+1) maps, concatenated and fused back to h x w by an
/// unpadded 2x2 conv -> BN -> SiLU.
struct StairConv {
  std::string name;
  StairAxis axis = StairAxis::horizontal;
  std::size_t k = 3;
  std::size_t c_in = 1, c_out = 1;
  /// Channels per branch; 0 selects ceil(c_out / 4).
  std::size_t branch_channels = 0;

  std::size_t c_branch() const { return branch_channels ? branch_channels : (c_out + 3) / 4; }
  /// Branch order: (1, first), (1, second), (2, first), (2, second).
  std::string branch_name(int level, StairSide side) const;

  void init(ParamStore& store, Rng& rng) const;
  /// Concatenated branch outputs, N x (h+1) x (w+1) x 4c'.
  Var features(Context& ctx, const Var& x) const;
  Var operator()(Context& ctx, const Var& x) const;
};

}  // namespace rdte
