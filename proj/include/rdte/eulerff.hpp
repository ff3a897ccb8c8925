// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "rdte/nn.hpp"

namespace rdte {

enum class EulerAxis { horizontal, vertical };

/// Largest representable value below pi; phases are this times tanh(.), so
/// they stay strictly inside (-pi, pi) even when tanh rounds to 1.
real phase_limit();

struct EulerParts {
  Var amplitude;  // softplus(conv), >= 0
  Var phase;      // phase_limit() * tanh(conv)
  Var expanded;   // [A cos(theta) || A sin(theta)], 2c channels
};

/// Amplitude/phase decomposition of one feature map followed by directional
/// grouped convolutions on the complex form, a pointwise channel path, and a
/// 1x1 fusion of [x, T_h, T_v, T_c] back to c channels.
struct EulerStream {
  std::string name;
  std::size_t channels = 1;

  /// 1x3 (horizontal) or 3x1 (vertical), same padding.
  Conv2dSpec directional(EulerAxis axis, std::size_t cin, std::size_t cout, std::size_t groups = 1) const;
  Conv2d amp(EulerAxis axis) const;
  Conv2d phase(EulerAxis axis) const;
  /// groups = c over the interleaved (re, im) pairs, 2c -> c.
  Conv2d group(EulerAxis axis) const;
  Conv2d chan() const;
  Conv2d fuse() const;

  void init(ParamStore& store, Rng& rng) const;
  EulerParts expand(Context& ctx, const Var& x, EulerAxis axis) const;
  Var operator()(Context& ctx, const Var& x) const;
};

/// Skip/decoder fusion: conv1x1([stream_s(x_s), stream_d(x_d)]).
struct EulerFF {
  std::string name;
  std::size_t channels = 1;
  /// Use one stream's weights for both inputs.
  bool shared_streams = false;

  EulerStream skip_stream() const;
  EulerStream decoder_stream() const;
  Conv2d fuse() const;
  void init(ParamStore& store, Rng& rng) const;
  Var operator()(Context& ctx, const Var& skip, const Var& decoder) const;
};

}  // namespace rdte
