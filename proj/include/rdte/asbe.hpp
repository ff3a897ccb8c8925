// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "rdte/nn.hpp"

namespace rdte {

/// Bilinear n x n sampling over a per-position rectangle.
/// x: N,h,w,c. sizes: N,h,w,2 holding (rect height, rect width) in pixels.
/// Grid point (i, j) of position (y, x) sits at
///   (y + (i/(n-1) - 1/2)(rh - 1), x + (j/(n-1) - 1/2)(rw - 1)),
/// read bilinearly with zeros outside the image. Returns N,h,w,(n*n*c) with
/// column order (i, j, channel). Differentiable in x and sizes.
Var rect_sample(const Var& x, const Var& sizes, std::size_t n);

/// Adaptive rectangular convolution: a 3x3 conv predicts rectangle sizes
/// 1 + (r_max - 1) * sigmoid(.), the rectangle is sampled on an n x n grid
/// and the samples are mixed by shared (n, n, c, c) weights.
struct ARConv {
  std::string name;
  std::size_t channels = 1;
  std::size_t n = 3;
  std::size_t r_max = 7;

  void validate() const;
  Conv2d shape_net() const;
  void init(ParamStore& store, Rng& rng) const;
  /// N,h,w,2 rectangle sizes in [1, r_max].
  Var sizes(Context& ctx, const Var& x) const;
  Var operator()(Context& ctx, const Var& x) const;
};

/// Boundary-enhancing stem:
///   x1 = conv1x1(x); d = x1 - avgpool3(x1); b = ReLU(arconv(x1) + d)
///   out = conv1x1([b, x1])
struct Asbe {
  std::string name;
  std::size_t in_channels = 1;
  std::size_t mid_channels = 16;
  std::size_t out_channels = 16;
  std::size_t n = 3;
  std::size_t r_max = 7;

  Conv2d compress() const;
  ARConv arconv() const;
  Conv2d out() const;
  void init(ParamStore& store, Rng& rng) const;
  /// The difference cue d.
  Var boundary_cue(Context& ctx, const Var& x) const;
  Var operator()(Context& ctx, const Var& x) const;
};

}  // namespace rdte
