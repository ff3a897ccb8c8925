// SPDX-License-Identifier: Apache-2.0
#include "rdte/eulerff.hpp"

#include <cmath>
#include <numbers>

#include "rdte/errors.hpp"

namespace rdte {

namespace {

const char* tag(EulerAxis axis) { return axis == EulerAxis::horizontal ? "h" : "v"; }

}  // namespace

real phase_limit() {
  real p = real(std::numbers::pi);
  while (double(p) >= std::numbers::pi) p = std::nextafter(p, real(0));
  return p;
}

Conv2dSpec EulerStream::directional(EulerAxis axis, std::size_t cin, std::size_t cout, std::size_t groups) const {
  return axis == EulerAxis::horizontal ? Conv2dSpec::same(1, 3, cin, cout, groups)
                                       : Conv2dSpec::same(3, 1, cin, cout, groups);
}

Conv2d EulerStream::amp(EulerAxis axis) const {
  return {name + ".amp_" + tag(axis), directional(axis, channels, channels)};
}
Conv2d EulerStream::phase(EulerAxis axis) const {
  return {name + ".phase_" + tag(axis), directional(axis, channels, channels)};
}
Conv2d EulerStream::group(EulerAxis axis) const {
  return {name + ".group_" + tag(axis), directional(axis, 2 * channels, channels, channels)};
}
Conv2d EulerStream::chan() const { return {name + ".chan", Conv2dSpec::valid(1, 1, channels, channels)}; }
Conv2d EulerStream::fuse() const { return {name + ".fuse", Conv2dSpec::valid(1, 1, 4 * channels, channels)}; }

void EulerStream::init(ParamStore& store, Rng& rng) const {
  for (EulerAxis a : {EulerAxis::horizontal, EulerAxis::vertical}) {
    amp(a).init(store, rng);
    phase(a).init(store, rng);
    group(a).init(store, rng);
  }
  chan().init(store, rng);
  fuse().init(store, rng);
}

EulerParts EulerStream::expand(Context& ctx, const Var& x, EulerAxis axis) const {
  if (x.value().rank() != 4 || x.dim(3) != channels)
    throw ShapeError(name + ": expected N,H,W," + std::to_string(channels) + " input, got " + shape_str(x.shape()));
  EulerParts p;
  p.amplitude = softplus(amp(axis)(ctx, x));
  p.phase = scale(tanh(phase(axis)(ctx, x)), phase_limit());
  p.expanded = concat_last({mul(p.amplitude, cos(p.phase)), mul(p.amplitude, sin(p.phase))});
  return p;
}

Var EulerStream::operator()(Context& ctx, const Var& x) const {
  std::vector<Var> parts{x};
  for (EulerAxis a : {EulerAxis::horizontal, EulerAxis::vertical})
    parts.push_back(group(a)(ctx, interleave_halves(expand(ctx, x, a).expanded)));
  parts.push_back(silu(chan()(ctx, x)));
  return fuse()(ctx, concat_last(parts));
}

EulerStream EulerFF::skip_stream() const { return {name + (shared_streams ? ".stream" : ".skip"), channels}; }
EulerStream EulerFF::decoder_stream() const { return {name + (shared_streams ? ".stream" : ".dec"), channels}; }
Conv2d EulerFF::fuse() const { return {name + ".fuse", Conv2dSpec::valid(1, 1, 2 * channels, channels)}; }

void EulerFF::init(ParamStore& store, Rng& rng) const {
  skip_stream().init(store, rng);
  if (!shared_streams) decoder_stream().init(store, rng);
  fuse().init(store, rng);
}

Var EulerFF::operator()(Context& ctx, const Var& skip, const Var& decoder) const {
  if (skip.shape() != decoder.shape())
    throw ShapeError(name + ": skip " + shape_str(skip.shape()) + " and decoder " + shape_str(decoder.shape()) +
                     " features differ");
  return fuse()(ctx, concat_last({skip_stream()(ctx, skip), decoder_stream()(ctx, decoder)}));
}

}  // namespace rdte
