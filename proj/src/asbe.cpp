// SPDX-License-Identifier: Apache-2.0
#include "rdte/asbe.hpp"

#include <cmath>

#include "rdte/errors.hpp"

namespace rdte {

namespace {

struct Corner {
  long y, x;
  double wy, wx;    // bilinear weights
  double dwy, dwx;  // their derivatives w.r.t. the sample coordinate
};

// The four bilinear corners of (py, px); out-of-image corners are dropped by the caller.
void corners(double py, double px, Corner out[4]) {
  const double fy = std::floor(py), fx = std::floor(px);
  const double ty = py - fy, tx = px - fx;
  const long y0 = long(fy), x0 = long(fx);
  out[0] = {y0, x0, 1 - ty, 1 - tx, -1, -1};
  out[1] = {y0, x0 + 1, 1 - ty, tx, -1, 1};
  out[2] = {y0 + 1, x0, ty, 1 - tx, 1, -1};
  out[3] = {y0 + 1, x0 + 1, ty, tx, 1, 1};
}

}  // namespace

Var rect_sample(const Var& x, const Var& sizes, std::size_t n) {
  const Tensor& xv = x.value();
  const Tensor& sv = sizes.value();
  if (xv.rank() != 4) throw ShapeError("rect_sample expects N,H,W,C input, got " + shape_str(xv.shape()));
  if (sv.shape() != Shape{xv.dim(0), xv.dim(1), xv.dim(2), 2})
    throw ShapeError("rect_sample sizes must be N,H,W,2, got " + shape_str(sv.shape()));
  if (n < 2) throw ConfigError("rect_sample grid extent must be at least 2");
  const std::size_t N = xv.dim(0), H = xv.dim(1), W = xv.dim(2), C = xv.dim(3);
  std::vector<double> frac(n);
  for (std::size_t i = 0; i < n; ++i) frac[i] = double(i) / double(n - 1) - 0.5;

  Tensor out({N, H, W, n * n * C});
  auto visit = [N, H, W, C, n, frac](const Tensor& ss, auto&& body) {
    Corner cs[4];
    for (std::size_t b = 0; b < N; ++b)
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t xx = 0; xx < W; ++xx) {
          const std::size_t pos = (b * H + y) * W + xx;
          const double rh = ss[pos * 2], rw = ss[pos * 2 + 1];
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
              corners(double(y) + frac[i] * (rh - 1), double(xx) + frac[j] * (rw - 1), cs);
              const std::size_t col = pos * n * n * C + (i * n + j) * C;
              for (const Corner& c : cs) {
                if (c.y < 0 || c.x < 0 || c.y >= long(H) || c.x >= long(W)) continue;
                const std::size_t src = ((b * H + std::size_t(c.y)) * W + std::size_t(c.x)) * C;
                body(c, src, col, pos, frac[i], frac[j]);
              }
            }
        }
  };

  visit(sv, [&](const Corner& c, std::size_t src, std::size_t col, std::size_t, double, double) {
    const double w = c.wy * c.wx;
    for (std::size_t ch = 0; ch < C; ++ch) out[col + ch] += real(w * xv[src + ch]);
  });

  const int ix = x.id(), is = sizes.id();
  return x.tape().record(std::move(out), {x, sizes}, [ix, is, C, visit](Tape& t, const Tensor& g) {
    const Tensor& xs = t.value(ix);
    const Tensor& ss = t.value(is);
    Tensor* gx = t.requires_grad(ix) ? &t.grad(ix) : nullptr;
    Tensor* gs = t.requires_grad(is) ? &t.grad(is) : nullptr;
    visit(ss, [&](const Corner& c, std::size_t src, std::size_t col, std::size_t pos, double fi, double fj) {
      const double w = c.wy * c.wx;
      double dot = 0;
      for (std::size_t ch = 0; ch < C; ++ch) {
        if (gx) (*gx)[src + ch] += real(w * g[col + ch]);
        dot += double(g[col + ch]) * xs[src + ch];
      }
      if (gs) {
        // d(py)/d(rh) = fi, d(px)/d(rw) = fj
        (*gs)[pos * 2] += real(dot * c.dwy * c.wx * fi);
        (*gs)[pos * 2 + 1] += real(dot * c.wy * c.dwx * fj);
      }
    });
  });
}

void ARConv::validate() const {
  if (n < 2) throw ConfigError(name + ": sample grid extent must be at least 2");
  if (r_max < 1 || r_max % 2 == 0) throw ConfigError(name + ": r_max must be odd");
}

Conv2d ARConv::shape_net() const { return {name + ".shape", Conv2dSpec::same(3, 3, channels, 2)}; }

void ARConv::init(ParamStore& store, Rng& rng) const {
  validate();
  shape_net().init(store, rng);
  store.add(name + ".w", kaiming_uniform({n, n, channels, channels}, n * n * channels, rng));
}

Var ARConv::sizes(Context& ctx, const Var& x) const {
  return add_scalar(scale(sigmoid(shape_net()(ctx, x)), real(r_max - 1)), 1);
}

Var ARConv::operator()(Context& ctx, const Var& x) const {
  validate();
  if (x.value().rank() != 4 || x.dim(3) != channels)
    throw ShapeError(name + ": expected N,H,W," + std::to_string(channels) + " input, got " + shape_str(x.shape()));
  const std::size_t N = x.dim(0), H = x.dim(1), W = x.dim(2);
  Var cols = reshape(rect_sample(x, sizes(ctx, x), n), {N * H * W, n * n * channels});
  Var w = reshape(ctx.param(name + ".w"), {n * n * channels, channels});
  return reshape(matmul(cols, w), {N, H, W, channels});
}

Conv2d Asbe::compress() const { return {name + ".compress", Conv2dSpec::valid(1, 1, in_channels, mid_channels)}; }
ARConv Asbe::arconv() const { return {name + ".arconv", mid_channels, n, r_max}; }
Conv2d Asbe::out() const { return {name + ".out", Conv2dSpec::valid(1, 1, 2 * mid_channels, out_channels)}; }

void Asbe::init(ParamStore& store, Rng& rng) const {
  compress().init(store, rng);
  arconv().init(store, rng);
  out().init(store, rng);
}

Var Asbe::boundary_cue(Context& ctx, const Var& x) const {
  Var x1 = compress()(ctx, x);
  return sub(x1, avg_pool(x1, 3));
}

Var Asbe::operator()(Context& ctx, const Var& x) const {
  if (x.value().rank() != 4 || x.dim(3) != in_channels)
    throw ShapeError(name + ": expected N,H,W," + std::to_string(in_channels) + " input, got " + shape_str(x.shape()));
  if (x.dim(1) < 4 || x.dim(2) < 4)
    throw ShapeError(name + ": spatial extents must be at least 4, got " + shape_str(x.shape()));
  Var x1 = compress()(ctx, x);
  Var d = sub(x1, avg_pool(x1, 3));
  Var b = relu(add(arconv()(ctx, x1), d));
  return out()(ctx, concat_last({b, x1}));
}

}  // namespace rdte
