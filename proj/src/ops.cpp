// SPDX-License-Identifier: Apache-2.0
#include "rdte/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "blas.hpp"
#include "rdte/errors.hpp"

namespace rdte {

namespace {

enum class Bcast { same, channel, scalar };

Bcast broadcast_kind(const Shape& a, const Shape& b) {
  if (a == b) return Bcast::same;
  if (shape_size(b) == 1) return Bcast::scalar;
  if (b.size() == 1 && b[0] == a.back()) return Bcast::channel;
  throw ShapeError("incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

inline std::size_t bidx(Bcast kind, std::size_t i, std::size_t c) {
  switch (kind) {
    case Bcast::same: return i;
    case Bcast::scalar: return 0;
    case Bcast::channel: return i % c;
  }
  return 0;
}

inline real sigmoid_of(real x) {
  if (x >= 0) return real(1) / (real(1) + std::exp(-x));
  const real e = std::exp(x);
  return e / (real(1) + e);
}

inline real softplus_of(real x) { return std::max(x, real(0)) + std::log1p(std::exp(-std::abs(x))); }

// Adds `g` into the gradient of `dst`, reducing over broadcast dimensions.
void accumulate_broadcast(Tape& t, int dst, const Tensor& g, Bcast kind) {
  Tensor& gd = t.grad(dst);
  switch (kind) {
    case Bcast::same:
      for (std::size_t i = 0; i < g.size(); ++i) gd[i] += g[i];
      break;
    case Bcast::scalar: {
      double s = 0;
      for (std::size_t i = 0; i < g.size(); ++i) s += g[i];
      gd[0] += real(s);
      break;
    }
    case Bcast::channel: {
      const std::size_t c = gd.size();
      std::vector<double> acc(c, 0.0);
      for (std::size_t i = 0; i < g.size(); ++i) acc[i % c] += g[i];
      for (std::size_t j = 0; j < c; ++j) gd[j] += real(acc[j]);
      break;
    }
  }
}

void add_into(Tensor& dst, const Tensor& src) {
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
}

Var binary(Elementwise op, const Var& a, const Var& b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const Bcast kind = broadcast_kind(av.shape(), bv.shape());
  const std::size_t c = bv.size();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) {
    const real y = bv[bidx(kind, i, c)];
    switch (op) {
      case Elementwise::add: out[i] = av[i] + y; break;
      case Elementwise::sub: out[i] = av[i] - y; break;
      case Elementwise::mul: out[i] = av[i] * y; break;
      default: throw ContractError("not a binary elementwise op");
    }
  }
  const int ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [op, ia, ib, kind, c](Tape& t, const Tensor& g) {
    if (t.requires_grad(ia)) {
      Tensor& ga = t.grad(ia);
      if (op == Elementwise::mul) {
        const Tensor& bv = t.value(ib);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[bidx(kind, i, c)];
      } else {
        add_into(ga, g);
      }
    }
    if (t.requires_grad(ib)) {
      if (op == Elementwise::add) {
        accumulate_broadcast(t, ib, g, kind);
        return;
      }
      Tensor gb(g.shape());
      if (op == Elementwise::sub) {
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] = -g[i];
      } else {
        const Tensor& av = t.value(ia);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] = g[i] * av[i];
      }
      accumulate_broadcast(t, ib, gb, kind);
    }
  });
}

Var unary(Elementwise op, const Var& a) {
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) {
    const real x = av[i];
    switch (op) {
      case Elementwise::relu: out[i] = x > 0 ? x : real(0); break;
      case Elementwise::silu: out[i] = x * sigmoid_of(x); break;
      case Elementwise::tanh: out[i] = std::tanh(x); break;
      case Elementwise::cos: out[i] = std::cos(x); break;
      case Elementwise::sin: out[i] = std::sin(x); break;
      case Elementwise::softplus: out[i] = softplus_of(x); break;
      case Elementwise::exp: out[i] = std::exp(x); break;
      case Elementwise::sigmoid: out[i] = sigmoid_of(x); break;
      default: throw ContractError("not a unary elementwise op");
    }
  }
  Tape& tape = a.tape();
  const int ia = a.id();
  const int io = tape.next_id();
  return tape.record(std::move(out), {a}, [op, ia, io](Tape& t, const Tensor& g) {
    const Tensor& x = t.value(ia);
    const Tensor& y = t.value(io);
    Tensor& gx = t.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) {
      real d = 0;
      switch (op) {
        case Elementwise::relu: d = x[i] > 0 ? real(1) : real(0); break;
        case Elementwise::silu: {
          const real s = sigmoid_of(x[i]);
          d = s * (real(1) + x[i] * (real(1) - s));
          break;
        }
        case Elementwise::tanh: d = real(1) - y[i] * y[i]; break;
        case Elementwise::cos: d = -std::sin(x[i]); break;
        case Elementwise::sin: d = std::cos(x[i]); break;
        case Elementwise::softplus: d = sigmoid_of(x[i]); break;
        case Elementwise::exp: d = y[i]; break;
        case Elementwise::sigmoid: d = y[i] * (real(1) - y[i]); break;
        default: break;
      }
      gx[i] += g[i] * d;
    }
  });
}

Var pass_through(const Var& a, Tensor out) {
  const int ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia](Tape& t, const Tensor& g) { add_into(t.grad(ia), g); });
}

}  // namespace

Var elementwise(Elementwise op, const Var& a, std::optional<Var> b) {
  switch (op) {
    case Elementwise::add:
    case Elementwise::sub:
    case Elementwise::mul:
      if (!b) throw ContractError("binary elementwise op needs two operands");
      return binary(op, a, *b);
    default:
      if (b) throw ContractError("unary elementwise op given two operands");
      return unary(op, a);
  }
}

Var scale(const Var& a, real s) {
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * s;
  const int ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia, s](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
  });
}

Var add_scalar(const Var& a, real s) {
  Tensor out = a.value();
  for (auto& v : out.data()) v += s;
  return pass_through(a, std::move(out));
}

Var add_n(const std::vector<Var>& terms) {
  if (terms.empty()) throw ContractError("add_n needs at least one term");
  Tensor out = terms[0].value();
  for (std::size_t k = 1; k < terms.size(); ++k) {
    const Tensor& v = terms[k].value();
    if (!v.same_shape(out)) throw ShapeError("add_n: shape mismatch " + shape_str(v.shape()) + " vs " + shape_str(out.shape()));
    add_into(out, v);
  }
  std::vector<int> ids;
  for (const auto& v : terms) ids.push_back(v.id());
  return terms[0].tape().record(std::move(out), terms, [ids](Tape& t, const Tensor& g) {
    for (int id : ids)
      if (t.requires_grad(id)) add_into(t.grad(id), g);
  });
}

Var matmul(const Var& a, const Var& b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2) throw ShapeError("matmul expects 2-D operands");
  const int m = int(av.dim(0)), k = int(av.dim(1)), n = int(bv.dim(1));
  if (std::size_t(k) != bv.dim(0))
    throw ShapeError("matmul inner dimensions differ: " + shape_str(av.shape()) + " x " + shape_str(bv.shape()));
  Tensor out({std::size_t(m), std::size_t(n)});
  detail::gemm(false, false, m, n, k, 1, av.ptr(), k, bv.ptr(), n, 0, out.ptr(), n);
  const int ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib, m, n, k](Tape& t, const Tensor& g) {
    if (t.requires_grad(ia))
      detail::gemm(false, true, m, k, n, 1, g.ptr(), n, t.value(ib).ptr(), n, 1, t.grad(ia).ptr(), k);
    if (t.requires_grad(ib))
      detail::gemm(true, false, k, n, m, 1, t.value(ia).ptr(), k, g.ptr(), n, 1, t.grad(ib).ptr(), n);
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2) throw ShapeError("matmul_nt expects 2-D operands");
  const int m = int(av.dim(0)), k = int(av.dim(1)), n = int(bv.dim(0));
  if (std::size_t(k) != bv.dim(1))
    throw ShapeError("matmul_nt inner dimensions differ: " + shape_str(av.shape()) + " x " + shape_str(bv.shape()) + "^T");
  Tensor out({std::size_t(m), std::size_t(n)});
  detail::gemm(false, true, m, n, k, 1, av.ptr(), k, bv.ptr(), k, 0, out.ptr(), n);
  const int ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib, m, n, k](Tape& t, const Tensor& g) {
    if (t.requires_grad(ia))
      detail::gemm(false, false, m, k, n, 1, g.ptr(), n, t.value(ib).ptr(), k, 1, t.grad(ia).ptr(), k);
    if (t.requires_grad(ib))
      detail::gemm(true, false, n, k, m, 1, g.ptr(), n, t.value(ia).ptr(), k, 1, t.grad(ib).ptr(), k);
  });
}

Var softmax_rows(const Var& a) {
  const Tensor& av = a.value();
  if (av.rank() != 2) throw ShapeError("softmax_rows expects a 2-D tensor");
  const std::size_t rows = av.dim(0), cols = av.dim(1);
  Tensor out(av.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const real* x = av.ptr() + r * cols;
    real* y = out.ptr() + r * cols;
    real mx = -std::numeric_limits<real>::infinity();
    for (std::size_t j = 0; j < cols; ++j) mx = std::max(mx, x[j]);
    if (std::isnan(mx) || std::isinf(mx)) mx = 0;  // let NaN/inf propagate
    double s = 0;
    for (std::size_t j = 0; j < cols; ++j) {
      y[j] = std::exp(x[j] - mx);
      s += y[j];
    }
    for (std::size_t j = 0; j < cols; ++j) y[j] = real(y[j] / s);
  }
  Tape& tape = a.tape();
  const int ia = a.id(), io = tape.next_id();
  return tape.record(std::move(out), {a}, [ia, io, rows, cols](Tape& t, const Tensor& g) {
    const Tensor& y = t.value(io);
    Tensor& gx = t.grad(ia);
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t o = r * cols;
      double d = 0;
      for (std::size_t j = 0; j < cols; ++j) d += double(g[o + j]) * y[o + j];
      for (std::size_t j = 0; j < cols; ++j) gx[o + j] += y[o + j] * (g[o + j] - real(d));
    }
  });
}

Var log_softmax_rows(const Var& a) {
  const Tensor& av = a.value();
  if (av.rank() != 2) throw ShapeError("log_softmax_rows expects a 2-D tensor");
  const std::size_t rows = av.dim(0), cols = av.dim(1);
  Tensor out(av.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const real* x = av.ptr() + r * cols;
    real* y = out.ptr() + r * cols;
    real mx = -std::numeric_limits<real>::infinity();
    for (std::size_t j = 0; j < cols; ++j) mx = std::max(mx, x[j]);
    if (std::isnan(mx) || std::isinf(mx)) mx = 0;
    double s = 0;
    for (std::size_t j = 0; j < cols; ++j) s += std::exp(double(x[j] - mx));
    const real lse = mx + real(std::log(s));
    for (std::size_t j = 0; j < cols; ++j) y[j] = x[j] - lse;
  }
  Tape& tape = a.tape();
  const int ia = a.id(), io = tape.next_id();
  return tape.record(std::move(out), {a}, [ia, io, rows, cols](Tape& t, const Tensor& g) {
    const Tensor& y = t.value(io);
    Tensor& gx = t.grad(ia);
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t o = r * cols;
      double gs = 0;
      for (std::size_t j = 0; j < cols; ++j) gs += g[o + j];
      for (std::size_t j = 0; j < cols; ++j) gx[o + j] += g[o + j] - std::exp(y[o + j]) * real(gs);
    }
  });
}

Var sum(const Var& a) {
  double s = 0;
  for (auto v : a.value().data()) s += v;
  const int ia = a.id();
  return a.tape().record(Tensor({1}, real(s)), {a}, [ia](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad(ia);
    for (auto& v : ga.data()) v += g[0];
  });
}

Var mean(const Var& a) { return scale(sum(a), real(1) / real(a.value().size())); }

Var reshape(const Var& a, Shape shape) {
  if (a.shape() == shape) return a;
  return pass_through(a, a.value().reshaped(std::move(shape)));
}

Var concat_last(const std::vector<Var>& parts) {
  if (parts.empty()) throw ContractError("concat_last needs at least one part");
  Shape lead = parts[0].shape();
  lead.pop_back();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    Shape s = p.shape();
    const std::size_t w = s.back();
    s.pop_back();
    if (s != lead) throw ShapeError("concat_last: leading extents differ " + shape_str(p.shape()));
    widths.push_back(w);
    total += w;
  }
  const std::size_t rows = shape_size(lead.empty() ? Shape{1} : lead);
  Shape os = lead;
  os.push_back(total);
  Tensor out(os);
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& v = parts[k].value();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(v.ptr() + r * widths[k], widths[k], out.ptr() + r * total + off);
    off += widths[k];
  }
  std::vector<int> ids;
  for (const auto& p : parts) ids.push_back(p.id());
  return parts[0].tape().record(std::move(out), parts, [ids, widths, rows, total](Tape& t, const Tensor& g) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (t.requires_grad(ids[k])) {
        Tensor& gk = t.grad(ids[k]);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < widths[k]; ++j) gk[r * widths[k] + j] += g[r * total + off + j];
      }
      off += widths[k];
    }
  });
}

Var slice_last(const Var& a, std::size_t start, std::size_t count) {
  const Tensor& av = a.value();
  const std::size_t c = av.shape().back();
  if (count == 0 || start + count > c)
    throw ShapeError("slice_last: [" + std::to_string(start) + "," + std::to_string(start + count) +
                     ") out of range for " + shape_str(av.shape()));
  Shape os = av.shape();
  os.back() = count;
  const std::size_t rows = av.size() / c;
  Tensor out(os);
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(av.ptr() + r * c + start, count, out.ptr() + r * count);
  const int ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia, rows, c, start, count](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad(ia);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < count; ++j) ga[r * c + start + j] += g[r * count + j];
  });
}

Var concat_first(const std::vector<Var>& parts) {
  if (parts.empty()) throw ContractError("concat_first needs at least one part");
  Shape tail(parts[0].shape().begin() + 1, parts[0].shape().end());
  std::size_t n = 0;
  for (const auto& p : parts) {
    if (Shape(p.shape().begin() + 1, p.shape().end()) != tail)
      throw ShapeError("concat_first: trailing extents differ " + shape_str(p.shape()));
    n += p.dim(0);
  }
  Shape os = parts[0].shape();
  os[0] = n;
  Tensor out(os);
  std::size_t off = 0;
  std::vector<int> ids;
  for (const auto& p : parts) {
    std::copy(p.value().data().begin(), p.value().data().end(), out.ptr() + off);
    off += p.value().size();
    ids.push_back(p.id());
  }
  return parts[0].tape().record(std::move(out), parts, [ids](Tape& t, const Tensor& g) {
    std::size_t off = 0;
    for (int id : ids) {
      const std::size_t len = t.value(id).size();
      if (t.requires_grad(id)) {
        Tensor& gk = t.grad(id);
        for (std::size_t i = 0; i < len; ++i) gk[i] += g[off + i];
      }
      off += len;
    }
  });
}

Var select_first(const Var& a, std::size_t i) {
  const Tensor& av = a.value();
  if (i >= av.dim(0)) throw ShapeError("select_first: index out of range");
  if (av.dim(0) == 1) return a;
  Shape os = av.shape();
  os[0] = 1;
  const std::size_t len = av.size() / av.dim(0);
  Tensor out(os);
  std::copy_n(av.ptr() + i * len, len, out.ptr());
  const int ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia, i, len](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad(ia);
    for (std::size_t j = 0; j < len; ++j) ga[i * len + j] += g[j];
  });
}

Var interleave_halves(const Var& a) {
  const Tensor& av = a.value();
  const std::size_t c2 = av.shape().back();
  if (c2 % 2) throw ShapeError("interleave_halves needs an even last extent");
  const std::size_t c = c2 / 2, rows = av.size() / c2;
  Tensor out(av.shape());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < c; ++j) {
      out[r * c2 + 2 * j] = av[r * c2 + j];
      out[r * c2 + 2 * j + 1] = av[r * c2 + c + j];
    }
  const int ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia, rows, c, c2](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad(ia);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < c; ++j) {
        ga[r * c2 + j] += g[r * c2 + 2 * j];
        ga[r * c2 + c + j] += g[r * c2 + 2 * j + 1];
      }
  });
}

void check_finite(const Var& a, const char* where) {
  if (!a.value().all_finite()) throw NumericError(std::string("non-finite values in ") + where);
}

}  // namespace rdte
