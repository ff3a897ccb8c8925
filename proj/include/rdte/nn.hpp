// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <random>
#include <string>

#include "rdte/ops.hpp"
#include "rdte/param_store.hpp"
#include "rdte/tape.hpp"

namespace rdte {

using Rng = std::mt19937_64;

enum class Mode { train, eval };

/// Geometry of a 2-D convolution over N,H,W,C tensors.
struct Conv2dSpec {
  std::size_t kernel_h = 1, kernel_w = 1;
  std::size_t stride = 1;
  std::size_t pad_left = 0, pad_right = 0, pad_top = 0, pad_bottom = 0;
  std::size_t in_channels = 1, out_channels = 1;
  std::size_t groups = 1;

  /// Stride-1 convolution with symmetric padding that preserves H and W (odd kernels).
  static Conv2dSpec same(std::size_t kh, std::size_t kw, std::size_t cin, std::size_t cout,
                         std::size_t groups = 1);
  /// Unpadded convolution.
  static Conv2dSpec valid(std::size_t kh, std::size_t kw, std::size_t cin, std::size_t cout,
                          std::size_t stride = 1);

  void validate() const;
  /// Throws ShapeError when the result would be empty.
  std::size_t out_h(std::size_t h) const;
  std::size_t out_w(std::size_t w) const;
  /// (kernel_h, kernel_w, in_channels / groups, out_channels).
  Shape weight_shape() const;
};

/// Cross-correlation with explicit zero padding. w has weight_shape(), b has [Cout].
Var conv2d(const Var& x, const Conv2dSpec& spec, const Var& w, std::optional<Var> b = std::nullopt);

/// Adjoint of the 2x2 stride-2 conv2d: doubles H and W. `spec` describes this
/// layer (in_channels = channels of x); w has shape (2, 2, out_channels,
/// in_channels), i.e. the weight of the matching forward convolution.
Var conv2d_transpose(const Var& x, const Conv2dSpec& spec, const Var& w,
                     std::optional<Var> b = std::nullopt);

/// Zero padding of the spatial dims of an N,H,W,C tensor.
Var pad2d(const Var& x, std::size_t top, std::size_t bottom, std::size_t left, std::size_t right);

/// k x k mean filter, stride 1, same-size output. Border windows divide by
/// the count of in-image pixels, so constants are preserved.
Var avg_pool(const Var& x, std::size_t k, std::size_t stride = 1);

/// Batch-norm parameters plus running statistics living in a ParamStore.
struct NormState {
  Var gamma, beta;
  Tensor* running_mean = nullptr;
  Tensor* running_var = nullptr;
  real eps = real(1e-5);
  real momentum = real(0.1);
};

/// Per-channel normalization over N,H,W. Training mode uses batch statistics
/// and updates the running ones; eval mode uses the running ones.
Var batch_norm(const Var& x, NormState& state, bool training);

/// Normalization over the last (channel) axis at each position.
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, real eps = real(1e-5));

// ---------------------------------------------------------------------------
// Layers. Each owns a name prefix; init() registers its parameters in a
// store and the call operator runs it against that store.

struct Context {
  Tape& tape;
  ParamStore& params;
  Mode mode = Mode::train;

  Var param(const std::string& name) { return tape.param(params, name); }
  bool training() const { return mode == Mode::train; }
};

/// Kaiming-uniform fan-in init with unit (linear) gain: U(-sqrt(3/fan_in), sqrt(3/fan_in)).
Tensor kaiming_uniform(const Shape& shape, std::size_t fan_in, Rng& rng);

struct Conv2d {
  std::string name;
  Conv2dSpec spec;
  bool bias = true;

  void init(ParamStore& store, Rng& rng) const;
  Var operator()(Context& ctx, const Var& x) const;
};

/// 2x2 stride-2 deconvolution.
struct ConvTranspose2d {
  std::string name;
  std::size_t in_channels = 1, out_channels = 1;

  Conv2dSpec spec() const;
  void init(ParamStore& store, Rng& rng) const;
  Var operator()(Context& ctx, const Var& x) const;
};

struct BatchNorm {
  std::string name;
  std::size_t channels = 1;

  void init(ParamStore& store) const;
  Var operator()(Context& ctx, const Var& x) const;
};

struct LayerNorm {
  std::string name;
  std::size_t channels = 1;

  void init(ParamStore& store) const;
  Var operator()(Context& ctx, const Var& x) const;
};

/// Position-wise two-layer MLP: C -> hidden_mult*C -> SiLU -> C.
struct Mlp {
  std::string name;
  std::size_t channels = 1;
  std::size_t hidden_mult = 4;

  Conv2d fc1() const;
  Conv2d fc2() const;
  void init(ParamStore& store, Rng& rng) const;
  Var operator()(Context& ctx, const Var& x) const;
};

/// y = ReLU(BN(conv3x3(ReLU(BN(conv3x3(x))))) + x); channels preserved.
struct ResBlock {
  std::string name;
  std::size_t channels = 1;

  Conv2d conv1() const;
  Conv2d conv2() const;
  BatchNorm bn1() const;
  BatchNorm bn2() const;
  void init(ParamStore& store, Rng& rng) const;
  Var operator()(Context& ctx, const Var& x) const;
};

}  // namespace rdte
