// SPDX-License-Identifier: Apache-2.0
#include "rdte/nn.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "blas.hpp"
#include "rdte/errors.hpp"

namespace rdte {

// ---------------------------------------------------------------------------
// Conv2dSpec

Conv2dSpec Conv2dSpec::same(std::size_t kh, std::size_t kw, std::size_t cin, std::size_t cout,
                            std::size_t groups) {
  if (kh % 2 == 0 || kw % 2 == 0) throw ConfigError("same padding needs odd kernel extents");
  Conv2dSpec s;
  s.kernel_h = kh;
  s.kernel_w = kw;
  s.pad_top = s.pad_bottom = kh / 2;
  s.pad_left = s.pad_right = kw / 2;
  s.in_channels = cin;
  s.out_channels = cout;
  s.groups = groups;
  return s;
}

Conv2dSpec Conv2dSpec::valid(std::size_t kh, std::size_t kw, std::size_t cin, std::size_t cout,
                             std::size_t stride) {
  Conv2dSpec s;
  s.kernel_h = kh;
  s.kernel_w = kw;
  s.stride = stride;
  s.in_channels = cin;
  s.out_channels = cout;
  return s;
}

void Conv2dSpec::validate() const {
  if (kernel_h == 0 || kernel_w == 0 || stride == 0 || in_channels == 0 || out_channels == 0 || groups == 0)
    throw ConfigError("conv2d extents, stride, channels and groups must be positive");
  if (in_channels % groups || out_channels % groups)
    throw ConfigError("conv2d channels (" + std::to_string(in_channels) + "->" + std::to_string(out_channels) +
                      ") not divisible by groups " + std::to_string(groups));
}

std::size_t Conv2dSpec::out_h(std::size_t h) const {
  const std::size_t padded = h + pad_top + pad_bottom;
  if (padded < kernel_h)
    throw ShapeError("conv2d output height < 1 (input " + std::to_string(h) + ", kernel " +
                     std::to_string(kernel_h) + ")");
  return (padded - kernel_h) / stride + 1;
}

std::size_t Conv2dSpec::out_w(std::size_t w) const {
  const std::size_t padded = w + pad_left + pad_right;
  if (padded < kernel_w)
    throw ShapeError("conv2d output width < 1 (input " + std::to_string(w) + ", kernel " +
                     std::to_string(kernel_w) + ")");
  return (padded - kernel_w) / stride + 1;
}

Shape Conv2dSpec::weight_shape() const { return {kernel_h, kernel_w, in_channels / groups, out_channels}; }

// ---------------------------------------------------------------------------
// conv2d

namespace {

struct Geom {
  std::size_t n, h, w, cin, ho, wo, cout, kh, kw, stride, pt, pl, groups;
  std::size_t k() const { return kh * kw * cin; }
  std::size_t m() const { return n * ho * wo; }
  bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && ho == h && wo == w; }
};

Geom make_geom(const Tensor& x, const Conv2dSpec& s) {
  if (x.rank() != 4) throw ShapeError("conv2d expects N,H,W,C input, got " + shape_str(x.shape()));
  s.validate();
  if (x.dim(3) != s.in_channels)
    throw ShapeError("conv2d expects " + std::to_string(s.in_channels) + " input channels, got " +
                     std::to_string(x.dim(3)));
  return {x.dim(0), x.dim(1),        x.dim(2),     s.in_channels, s.out_h(x.dim(1)),
          s.out_w(x.dim(2)), s.out_channels, s.kernel_h, s.kernel_w, s.stride,
          s.pad_top, s.pad_left, s.groups};
}

// Rows indexed by output position, columns ordered (ky, kx, ci).
void im2col(const real* x, const Geom& g, real* col) {
  const std::size_t K = g.k();
  for (std::size_t n = 0; n < g.n; ++n)
    for (std::size_t oy = 0; oy < g.ho; ++oy)
      for (std::size_t ox = 0; ox < g.wo; ++ox) {
        real* row = col + ((n * g.ho + oy) * g.wo + ox) * K;
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
          const auto iy = std::ptrdiff_t(oy * g.stride + ky) - std::ptrdiff_t(g.pt);
          for (std::size_t kx = 0; kx < g.kw; ++kx) {
            const auto ix = std::ptrdiff_t(ox * g.stride + kx) - std::ptrdiff_t(g.pl);
            real* dst = row + (ky * g.kw + kx) * g.cin;
            if (iy < 0 || ix < 0 || iy >= std::ptrdiff_t(g.h) || ix >= std::ptrdiff_t(g.w)) {
              std::fill_n(dst, g.cin, real(0));
            } else {
              std::copy_n(x + ((n * g.h + std::size_t(iy)) * g.w + std::size_t(ix)) * g.cin, g.cin, dst);
            }
          }
        }
      }
}

void col2im_add(const real* col, const Geom& g, real* dx) {
  const std::size_t K = g.k();
  for (std::size_t n = 0; n < g.n; ++n)
    for (std::size_t oy = 0; oy < g.ho; ++oy)
      for (std::size_t ox = 0; ox < g.wo; ++ox) {
        const real* row = col + ((n * g.ho + oy) * g.wo + ox) * K;
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
          const auto iy = std::ptrdiff_t(oy * g.stride + ky) - std::ptrdiff_t(g.pt);
          if (iy < 0 || iy >= std::ptrdiff_t(g.h)) continue;
          for (std::size_t kx = 0; kx < g.kw; ++kx) {
            const auto ix = std::ptrdiff_t(ox * g.stride + kx) - std::ptrdiff_t(g.pl);
            if (ix < 0 || ix >= std::ptrdiff_t(g.w)) continue;
            const real* src = row + (ky * g.kw + kx) * g.cin;
            real* dst = dx + ((n * g.h + std::size_t(iy)) * g.w + std::size_t(ix)) * g.cin;
            for (std::size_t c = 0; c < g.cin; ++c) dst[c] += src[c];
          }
        }
      }
}

void add_bias(Tensor& out, const Tensor& b) {
  const std::size_t c = b.size();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i % c];
}

void bias_grad(const Tensor& g, Tensor& gb) {
  const std::size_t c = gb.size();
  std::vector<double> acc(c, 0.0);
  for (std::size_t i = 0; i < g.size(); ++i) acc[i % c] += g[i];
  for (std::size_t j = 0; j < c; ++j) gb[j] += real(acc[j]);
}

// Direct loops for grouped convolution (groups > 1). Accumulates in place.
template <typename Fn>
void for_each_tap(const Geom& g, Fn&& fn) {
  const std::size_t cin_g = g.cin / g.groups, cout_g = g.cout / g.groups;
  for (std::size_t n = 0; n < g.n; ++n)
    for (std::size_t oy = 0; oy < g.ho; ++oy)
      for (std::size_t ox = 0; ox < g.wo; ++ox) {
        const std::size_t o = ((n * g.ho + oy) * g.wo + ox) * g.cout;
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
          const auto iy = std::ptrdiff_t(oy * g.stride + ky) - std::ptrdiff_t(g.pt);
          if (iy < 0 || iy >= std::ptrdiff_t(g.h)) continue;
          for (std::size_t kx = 0; kx < g.kw; ++kx) {
            const auto ix = std::ptrdiff_t(ox * g.stride + kx) - std::ptrdiff_t(g.pl);
            if (ix < 0 || ix >= std::ptrdiff_t(g.w)) continue;
            const std::size_t i = ((n * g.h + std::size_t(iy)) * g.w + std::size_t(ix)) * g.cin;
            for (std::size_t co = 0; co < g.cout; ++co) {
              const std::size_t grp = co / cout_g;
              for (std::size_t cig = 0; cig < cin_g; ++cig) {
                const std::size_t wi = ((ky * g.kw + kx) * cin_g + cig) * g.cout + co;
                fn(i + grp * cin_g + cig, wi, o + co);
              }
            }
          }
        }
      }
}

}  // namespace

Var conv2d(const Var& x, const Conv2dSpec& spec, const Var& w, std::optional<Var> b) {
  const Tensor& xv = x.value();
  const Geom g = make_geom(xv, spec);
  if (w.shape() != spec.weight_shape())
    throw ShapeError("conv2d weight shape " + shape_str(w.shape()) + ", expected " +
                     shape_str(spec.weight_shape()));
  if (b && b->shape() != Shape{g.cout}) throw ShapeError("conv2d bias must have shape [Cout]");

  Tensor out({g.n, g.ho, g.wo, g.cout});
  const Tensor& wv = w.value();
  if (g.groups == 1) {
    const int M = int(g.m()), K = int(g.k()), C = int(g.cout);
    if (g.pointwise()) {
      detail::gemm(false, false, M, C, K, 1, xv.ptr(), K, wv.ptr(), C, 0, out.ptr(), C);
    } else {
      std::vector<real> col(g.m() * g.k());
      im2col(xv.ptr(), g, col.data());
      detail::gemm(false, false, M, C, K, 1, col.data(), K, wv.ptr(), C, 0, out.ptr(), C);
    }
  } else {
    const real* xp = xv.ptr();
    const real* wp = wv.ptr();
    real* op = out.ptr();
    for_each_tap(g, [&](std::size_t i, std::size_t wi, std::size_t o) { op[o] += xp[i] * wp[wi]; });
  }
  if (b) add_bias(out, b->value());

  std::vector<Var> inputs{x, w};
  const int ix = x.id(), iw = w.id();
  const int ib = b ? b->id() : -1;
  if (b) inputs.push_back(*b);
  return x.tape().record(std::move(out), inputs, [g, ix, iw, ib](Tape& t, const Tensor& gout) {
    const Tensor& xv = t.value(ix);
    const Tensor& wv = t.value(iw);
    if (ib >= 0 && t.requires_grad(ib)) bias_grad(gout, t.grad(ib));
    const bool need_x = t.requires_grad(ix), need_w = t.requires_grad(iw);
    if (g.groups == 1) {
      const int M = int(g.m()), K = int(g.k()), C = int(g.cout);
      if (g.pointwise()) {
        if (need_w) detail::gemm(true, false, K, C, M, 1, xv.ptr(), K, gout.ptr(), C, 1, t.grad(iw).ptr(), C);
        if (need_x) detail::gemm(false, true, M, K, C, 1, gout.ptr(), C, wv.ptr(), C, 1, t.grad(ix).ptr(), K);
        return;
      }
      std::vector<real> col(g.m() * g.k());
      if (need_w) {
        im2col(xv.ptr(), g, col.data());
        detail::gemm(true, false, K, C, M, 1, col.data(), K, gout.ptr(), C, 1, t.grad(iw).ptr(), C);
      }
      if (need_x) {
        detail::gemm(false, true, M, K, C, 1, gout.ptr(), C, wv.ptr(), C, 0, col.data(), K);
        col2im_add(col.data(), g, t.grad(ix).ptr());
      }
      return;
    }
    const real* xp = xv.ptr();
    const real* wp = wv.ptr();
    const real* gp = gout.ptr();
    real* gx = need_x ? t.grad(ix).ptr() : nullptr;
    real* gw = need_w ? t.grad(iw).ptr() : nullptr;
    for_each_tap(g, [&](std::size_t i, std::size_t wi, std::size_t o) {
      if (gx) gx[i] += gp[o] * wp[wi];
      if (gw) gw[wi] += gp[o] * xp[i];
    });
  });
}

Var conv2d_transpose(const Var& x, const Conv2dSpec& spec, const Var& w, std::optional<Var> b) {
  if (spec.kernel_h != 2 || spec.kernel_w != 2 || spec.stride != 2 || spec.groups != 1 || spec.pad_left ||
      spec.pad_right || spec.pad_top || spec.pad_bottom)
    throw ConfigError("conv2d_transpose supports only 2x2 kernels with stride 2, no padding, one group");
  const Tensor& xv = x.value();
  if (xv.rank() != 4 || xv.dim(3) != spec.in_channels)
    throw ShapeError("conv2d_transpose input " + shape_str(xv.shape()) + " does not match " +
                     std::to_string(spec.in_channels) + " channels");
  const Shape ws{2, 2, spec.out_channels, spec.in_channels};
  if (w.shape() != ws) throw ShapeError("conv2d_transpose weight shape " + shape_str(w.shape()) + ", expected " + shape_str(ws));
  if (b && b->shape() != Shape{spec.out_channels}) throw ShapeError("conv2d_transpose bias must have shape [Cout]");

  const std::size_t N = xv.dim(0), H = xv.dim(1), W = xv.dim(2), Cin = spec.in_channels, Cout = spec.out_channels;
  const int M = int(N * H * W), C4 = int(4 * Cout);
  // taps[m, (a*2+b)*Cout + co] for input position m.
  std::vector<real> taps(std::size_t(M) * std::size_t(C4));
  detail::gemm(false, true, M, C4, int(Cin), 1, xv.ptr(), int(Cin), w.value().ptr(), int(Cin), 0, taps.data(), C4);

  Tensor out({N, 2 * H, 2 * W, Cout});
  auto scatter_index = [=](std::size_t m, std::size_t tap) {
    const std::size_t n = m / (H * W), i = (m / W) % H, j = m % W;
    const std::size_t a = tap / 2, bb = tap % 2;
    return ((n * 2 * H + 2 * i + a) * 2 * W + 2 * j + bb) * Cout;
  };
  for (std::size_t m = 0; m < std::size_t(M); ++m)
    for (std::size_t tap = 0; tap < 4; ++tap)
      std::copy_n(taps.data() + m * C4 + tap * Cout, Cout, out.ptr() + scatter_index(m, tap));
  if (b) add_bias(out, b->value());

  std::vector<Var> inputs{x, w};
  const int ix = x.id(), iw = w.id(), ib = b ? b->id() : -1;
  if (b) inputs.push_back(*b);
  return x.tape().record(std::move(out), inputs, [=](Tape& t, const Tensor& g) {
    if (ib >= 0 && t.requires_grad(ib)) bias_grad(g, t.grad(ib));
    std::vector<real> gtaps(std::size_t(M) * std::size_t(C4));
    for (std::size_t m = 0; m < std::size_t(M); ++m)
      for (std::size_t tap = 0; tap < 4; ++tap)
        std::copy_n(g.ptr() + scatter_index(m, tap), Cout, gtaps.data() + m * C4 + tap * Cout);
    if (t.requires_grad(ix))
      detail::gemm(false, false, M, int(Cin), C4, 1, gtaps.data(), C4, t.value(iw).ptr(), int(Cin), 1,
                   t.grad(ix).ptr(), int(Cin));
    if (t.requires_grad(iw))
      detail::gemm(true, false, C4, int(Cin), M, 1, gtaps.data(), C4, t.value(ix).ptr(), int(Cin), 1,
                   t.grad(iw).ptr(), int(Cin));
  });
}

Var pad2d(const Var& x, std::size_t top, std::size_t bottom, std::size_t left, std::size_t right) {
  const Tensor& xv = x.value();
  if (xv.rank() != 4) throw ShapeError("pad2d expects N,H,W,C input");
  const std::size_t N = xv.dim(0), H = xv.dim(1), W = xv.dim(2), C = xv.dim(3);
  const std::size_t Ho = H + top + bottom, Wo = W + left + right;
  Tensor out({N, Ho, Wo, C});
  auto dst_row = [=](std::size_t n, std::size_t y) { return ((n * Ho + y + top) * Wo + left) * C; };
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t y = 0; y < H; ++y)
      std::copy_n(xv.ptr() + (n * H + y) * W * C, W * C, out.ptr() + dst_row(n, y));
  const int ix = x.id();
  return x.tape().record(std::move(out), {x}, [=](Tape& t, const Tensor& g) {
    Tensor& gx = t.grad(ix);
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t y = 0; y < H; ++y) {
        const real* src = g.ptr() + dst_row(n, y);
        real* dst = gx.ptr() + (n * H + y) * W * C;
        for (std::size_t i = 0; i < W * C; ++i) dst[i] += src[i];
      }
  });
}

Var avg_pool(const Var& x, std::size_t k, std::size_t stride) {
  if (k == 0 || k % 2 == 0) throw ConfigError("avg_pool with same padding needs an odd kernel, got " + std::to_string(k));
  if (stride != 1) throw ConfigError("avg_pool with same padding supports stride 1 only");
  const Tensor& xv = x.value();
  if (xv.rank() != 4) throw ShapeError("avg_pool expects N,H,W,C input");
  const std::size_t N = xv.dim(0), H = xv.dim(1), W = xv.dim(2), C = xv.dim(3);
  const auto r = std::ptrdiff_t(k / 2);

  // Visits each (output position, in-window input position) pair with 1/count.
  auto visit = [=](auto&& fn) {
    for (std::size_t n = 0; n < N; ++n)
      for (std::ptrdiff_t y = 0; y < std::ptrdiff_t(H); ++y)
        for (std::ptrdiff_t x0 = 0; x0 < std::ptrdiff_t(W); ++x0) {
          const std::ptrdiff_t y0 = std::max<std::ptrdiff_t>(0, y - r), y1 = std::min<std::ptrdiff_t>(H - 1, y + r);
          const std::ptrdiff_t xa = std::max<std::ptrdiff_t>(0, x0 - r), xb = std::min<std::ptrdiff_t>(W - 1, x0 + r);
          const real inv = real(1) / real((y1 - y0 + 1) * (xb - xa + 1));
          const std::size_t o = ((n * H + std::size_t(y)) * W + std::size_t(x0)) * C;
          for (std::ptrdiff_t yy = y0; yy <= y1; ++yy)
            for (std::ptrdiff_t xx = xa; xx <= xb; ++xx)
              fn(o, ((n * H + std::size_t(yy)) * W + std::size_t(xx)) * C, inv);
        }
  };
  Tensor out(xv.shape());
  visit([&](std::size_t o, std::size_t i, real inv) {
    for (std::size_t c = 0; c < C; ++c) out[o + c] += xv[i + c] * inv;
  });
  const int ix = x.id();
  return x.tape().record(std::move(out), {x}, [=](Tape& t, const Tensor& g) {
    Tensor& gx = t.grad(ix);
    visit([&](std::size_t o, std::size_t i, real inv) {
      for (std::size_t c = 0; c < C; ++c) gx[i + c] += g[o + c] * inv;
    });
  });
}

Var batch_norm(const Var& x, NormState& st, bool training) {
  const Tensor& xv = x.value();
  const std::size_t C = xv.shape().back();
  if (st.gamma.shape() != Shape{C} || st.beta.shape() != Shape{C} || !st.running_mean || !st.running_var ||
      st.running_mean->size() != C || st.running_var->size() != C)
    throw ShapeError("batch_norm state does not match " + std::to_string(C) + " channels");
  const std::size_t m = xv.size() / C;
  if (training && m < 2) throw ShapeError("batch_norm in training mode needs more than one value per channel");

  std::vector<real> mu(C), inv_std(C);
  if (training) {
    std::vector<double> s(C, 0.0), ss(C, 0.0);
    for (std::size_t i = 0; i < xv.size(); ++i) s[i % C] += xv[i];
    for (std::size_t c = 0; c < C; ++c) mu[c] = real(s[c] / double(m));
    for (std::size_t i = 0; i < xv.size(); ++i) {
      const double d = double(xv[i]) - mu[i % C];
      ss[i % C] += d * d;
    }
    for (std::size_t c = 0; c < C; ++c) {
      const double var = ss[c] / double(m);
      inv_std[c] = real(1.0 / std::sqrt(var + st.eps));
      auto& rm = (*st.running_mean)[c];
      auto& rv = (*st.running_var)[c];
      rm = (1 - st.momentum) * rm + st.momentum * mu[c];
      rv = (1 - st.momentum) * rv + st.momentum * real(ss[c] / double(m - 1));
    }
  } else {
    for (std::size_t c = 0; c < C; ++c) {
      mu[c] = (*st.running_mean)[c];
      inv_std[c] = real(1.0 / std::sqrt(double((*st.running_var)[c]) + st.eps));
    }
  }

  const Tensor& gamma = st.gamma.value();
  const Tensor& beta = st.beta.value();
  Tensor xhat(xv.shape()), out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const std::size_t c = i % C;
    xhat[i] = (xv[i] - mu[c]) * inv_std[c];
    out[i] = gamma[c] * xhat[i] + beta[c];
  }
  const int ix = x.id(), ig = st.gamma.id(), ibt = st.beta.id();
  return x.tape().record(std::move(out), {x, st.gamma, st.beta},
                         [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t, const Tensor& g) {
    const Tensor& gamma = t.value(ig);
    std::vector<double> sum_g(C, 0.0), sum_gx(C, 0.0);
    for (std::size_t i = 0; i < g.size(); ++i) {
      sum_g[i % C] += g[i];
      sum_gx[i % C] += double(g[i]) * xhat[i];
    }
    if (t.requires_grad(ig)) {
      Tensor& gg = t.grad(ig);
      for (std::size_t c = 0; c < C; ++c) gg[c] += real(sum_gx[c]);
    }
    if (t.requires_grad(ibt)) {
      Tensor& gb = t.grad(ibt);
      for (std::size_t c = 0; c < C; ++c) gb[c] += real(sum_g[c]);
    }
    if (!t.requires_grad(ix)) return;
    Tensor& gx = t.grad(ix);
    if (training) {
      // dx = gamma*inv_std/m * (m*g - sum(g) - xhat*sum(g*xhat))
      for (std::size_t i = 0; i < g.size(); ++i) {
        const std::size_t c = i % C;
        const double v = double(m) * g[i] - sum_g[c] - xhat[i] * sum_gx[c];
        gx[i] += real(gamma[c] * inv_std[c] * v / double(m));
      }
    } else {
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * gamma[i % C] * inv_std[i % C];
    }
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, real eps) {
  const Tensor& xv = x.value();
  const std::size_t C = xv.shape().back();
  if (gamma.shape() != Shape{C} || beta.shape() != Shape{C})
    throw ShapeError("layer_norm affine parameters must have shape [" + std::to_string(C) + "]");
  const std::size_t rows = xv.size() / C;
  Tensor xhat(xv.shape()), out(xv.shape());
  std::vector<real> inv_std(rows);
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  for (std::size_t r = 0; r < rows; ++r) {
    const real* p = xv.ptr() + r * C;
    double s = 0;
    for (std::size_t c = 0; c < C; ++c) s += p[c];
    const double mu = s / double(C);
    double ss = 0;
    for (std::size_t c = 0; c < C; ++c) ss += (p[c] - mu) * (p[c] - mu);
    inv_std[r] = real(1.0 / std::sqrt(ss / double(C) + eps));
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t i = r * C + c;
      xhat[i] = real((p[c] - mu) * inv_std[r]);
      out[i] = gv[c] * xhat[i] + bv[c];
    }
  }
  const int ix = x.id(), ig = gamma.id(), ib = beta.id();
  return x.tape().record(std::move(out), {x, gamma, beta},
                         [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t, const Tensor& g) {
    const Tensor& gv = t.value(ig);
    if (t.requires_grad(ig) || t.requires_grad(ib)) {
      std::vector<double> sg(C, 0.0), sgx(C, 0.0);
      for (std::size_t i = 0; i < g.size(); ++i) {
        sg[i % C] += g[i];
        sgx[i % C] += double(g[i]) * xhat[i];
      }
      if (t.requires_grad(ig))
        for (std::size_t c = 0; c < C; ++c) t.grad(ig)[c] += real(sgx[c]);
      if (t.requires_grad(ib))
        for (std::size_t c = 0; c < C; ++c) t.grad(ib)[c] += real(sg[c]);
    }
    if (!t.requires_grad(ix)) return;
    Tensor& gx = t.grad(ix);
    for (std::size_t r = 0; r < rows; ++r) {
      double s1 = 0, s2 = 0;
      for (std::size_t c = 0; c < C; ++c) {
        const double d = double(g[r * C + c]) * gv[c];
        s1 += d;
        s2 += d * xhat[r * C + c];
      }
      for (std::size_t c = 0; c < C; ++c) {
        const std::size_t i = r * C + c;
        const double d = double(g[i]) * gv[c];
        gx[i] += real(inv_std[r] * (double(C) * d - s1 - xhat[i] * s2) / double(C));
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Layers

Tensor kaiming_uniform(const Shape& shape, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(3.0 / double(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor t(shape);
  for (auto& v : t.data()) v = real(dist(rng));
  return t;
}

void Conv2d::init(ParamStore& store, Rng& rng) const {
  spec.validate();
  const std::size_t fan_in = spec.kernel_h * spec.kernel_w * (spec.in_channels / spec.groups);
  store.add(name + ".w", kaiming_uniform(spec.weight_shape(), fan_in, rng));
  if (bias) store.add(name + ".b", Tensor::zeros({spec.out_channels}));
}

Var Conv2d::operator()(Context& ctx, const Var& x) const {
  std::optional<Var> b;
  if (bias) b = ctx.param(name + ".b");
  return conv2d(x, spec, ctx.param(name + ".w"), b);
}

Conv2dSpec ConvTranspose2d::spec() const {
  Conv2dSpec s = Conv2dSpec::valid(2, 2, in_channels, out_channels, 2);
  return s;
}

void ConvTranspose2d::init(ParamStore& store, Rng& rng) const {
  store.add(name + ".w", kaiming_uniform({2, 2, out_channels, in_channels}, in_channels, rng));
  store.add(name + ".b", Tensor::zeros({out_channels}));
}

Var ConvTranspose2d::operator()(Context& ctx, const Var& x) const {
  return conv2d_transpose(x, spec(), ctx.param(name + ".w"), ctx.param(name + ".b"));
}

void BatchNorm::init(ParamStore& store) const {
  store.add(name + ".gamma", Tensor::full({channels}, 1));
  store.add(name + ".beta", Tensor::zeros({channels}));
  store.add(name + ".running_mean", Tensor::zeros({channels}), false);
  store.add(name + ".running_var", Tensor::full({channels}, 1), false);
}

Var BatchNorm::operator()(Context& ctx, const Var& x) const {
  NormState st;
  st.gamma = ctx.param(name + ".gamma");
  st.beta = ctx.param(name + ".beta");
  st.running_mean = &ctx.params.get(name + ".running_mean").value;
  st.running_var = &ctx.params.get(name + ".running_var").value;
  return batch_norm(x, st, ctx.training());
}

void LayerNorm::init(ParamStore& store) const {
  store.add(name + ".gamma", Tensor::full({channels}, 1));
  store.add(name + ".beta", Tensor::zeros({channels}));
}

Var LayerNorm::operator()(Context& ctx, const Var& x) const {
  return layer_norm(x, ctx.param(name + ".gamma"), ctx.param(name + ".beta"));
}

Conv2d Mlp::fc1() const { return {name + ".fc1", Conv2dSpec::valid(1, 1, channels, hidden_mult * channels)}; }
Conv2d Mlp::fc2() const { return {name + ".fc2", Conv2dSpec::valid(1, 1, hidden_mult * channels, channels)}; }

void Mlp::init(ParamStore& store, Rng& rng) const {
  fc1().init(store, rng);
  fc2().init(store, rng);
}

Var Mlp::operator()(Context& ctx, const Var& x) const { return fc2()(ctx, silu(fc1()(ctx, x))); }

Conv2d ResBlock::conv1() const { return {name + ".conv1", Conv2dSpec::same(3, 3, channels, channels), false}; }
Conv2d ResBlock::conv2() const { return {name + ".conv2", Conv2dSpec::same(3, 3, channels, channels), false}; }
BatchNorm ResBlock::bn1() const { return {name + ".bn1", channels}; }
BatchNorm ResBlock::bn2() const { return {name + ".bn2", channels}; }

void ResBlock::init(ParamStore& store, Rng& rng) const {
  conv1().init(store, rng);
  bn1().init(store);
  conv2().init(store, rng);
  bn2().init(store);
}

Var ResBlock::operator()(Context& ctx, const Var& x) const {
  if (x.value().rank() != 4 || x.dim(3) != channels)
    throw ShapeError(name + ": expected " + std::to_string(channels) + " channels, got " + shape_str(x.shape()));
  Var h = relu(bn1()(ctx, conv1()(ctx, x)));
  h = bn2()(ctx, conv2()(ctx, h));
  return relu(add(h, x));
}

}  // namespace rdte
