// SPDX-License-Identifier: Apache-2.0
#include "rdte/gradcheck.hpp"

#include <algorithm>
#include <functional>
#include <cmath>
#include <random>
#include <set>

#include "rdte/errors.hpp"
#include "rdte/ops.hpp"

namespace rdte {

namespace {

// Halvings tried when the first central difference misses. A kink inside
// [x - eps, x + eps] usually drops out of a narrower bracket, and
// Richardson extrapolation of successive steps, (4 D(h/2) - D(h)) / 3,
// removes the O(h^2) curvature term; a wrong derivative keeps missing at
// every step.
constexpr int kRefinements = 3;
constexpr double kMinStep = 1e-4;

// Rounding noise of f is bounded by its spread over a few ulp nudges of
// this many coordinates.
constexpr std::size_t kNoiseCoords = 4;

// Evaluates the checked scalar with coordinate i set to a given value.
using EvalAt = std::function<double(std::size_t i, real v)>;

// Largest |f(x + k ulp e_j) - f(x)|, k = +-1, +-2, over a few coordinates.
// The true change is a few ulps of the derivative; the rest is rounding.
double noise_bound(const EvalAt& eval, const std::vector<real>& x, double f0) {
  double worst = 0;
  const std::size_t stride = std::max<std::size_t>(1, x.size() / kNoiseCoords);
  for (std::size_t i = 0; i < x.size(); i += stride) {
    for (real dir : {real(INFINITY), real(-INFINITY)}) {
      real v = x[i];
      for (int k = 0; k < 2; ++k) {
        v = std::nextafter(v, dir);
        worst = std::max(worst, std::abs(eval(i, v) - f0));
      }
    }
  }
  return worst;
}

struct Probe {
  double f0, fp, fm;  // f at x, x+hp, x-hm
  double hp, hm;      // actual representable step sizes
};

Probe probe(const EvalAt& eval, std::size_t i, real x, double f0, double h) {
  const real up = real(x + h), down = real(x - h);
  return {f0, eval(i, up), eval(i, down), double(up) - x, x - double(down)};
}

double central_of(const Probe& p) { return (p.fp - p.fm) / (p.hp + p.hm); }

// Analytic value matches a one-sided difference while the two sides
// disagree: the bracket straddles a kink.
bool straddles_kink(const Probe& p, double analytic, double tol) {
  const double right = (p.fp - p.f0) / p.hp;
  const double left = (p.f0 - p.fm) / p.hm;
  const bool one_sided_match = relative_error(analytic, right) <= tol || relative_error(analytic, left) <= tol;
  return one_sided_match && relative_error(right, left) > tol;
}

// Folds coordinate i into the report.
//
// A miss only counts when the differences have settled: two successive
// steps agree within tol, and at both the rounding noise, noise / h, is
// under tol / 2 of the difference. Differences that keep moving as the
// step shrinks (a kink, a near-singular normalization) or that noise can
// swamp certify nothing, so the coordinate is excluded.
void score(GradcheckReport& rep, std::size_t index, double analytic, const EvalAt& eval, std::size_t i, real x,
           double f0, double noise, double eps, double tol) {
  auto resolved = [&](double d, double h) { return noise / h <= 0.25 * tol * std::abs(d); };
  Probe p = probe(eval, i, x, f0, eps);
  double prev = central_of(p);
  bool prev_resolved = resolved(prev, eps);
  double best = prev, best_err = relative_error(analytic, prev);
  bool kink = straddles_kink(p, analytic, tol);
  bool settled = false;
  auto consider = [&](double numeric) {
    const double err = relative_error(analytic, numeric);
    if (err < best_err) best = numeric, best_err = err;
  };
  double h = eps;
  for (int r = 0; best_err > tol && r < kRefinements && h / 2 >= kMinStep; ++r) {
    h /= 2;
    p = probe(eval, i, x, f0, h);
    const double d = central_of(p);
    consider(d);
    consider(d + (d - prev) / 3);
    const bool now_resolved = resolved(d, h);
    settled = settled || (prev_resolved && now_resolved && relative_error(prev, d) <= tol);
    kink = kink || straddles_kink(p, analytic, tol);
    prev = d, prev_resolved = now_resolved;
  }
  if (best_err > tol && (kink || !settled)) {
    ++rep.excluded;
    return;
  }
  ++rep.checked;
  if (rep.checked == 1 || best_err > rep.max_rel_err) {
    rep.max_rel_err = best_err;
    rep.worst_index = index;
    rep.worst_analytic = analytic;
    rep.worst_numeric = best;
  }
}

// The checked scalar: entries summed in double, so the result is not
// rounded back to `real` before differencing.
double total(const Tensor& y) {
  double s = 0;
  for (real v : y.data()) s += double(v);
  return s;
}

Var as_scalar(const Var& y) { return y.value().size() == 1 ? y : sum(y); }

void finish(GradcheckReport& rep, double tol) {
  rep.pass = rep.valid && rep.checked > 0 && rep.excluded <= rep.checked && rep.max_rel_err <= tol;
}

void check_eps(double eps) {
  if (!(eps > 0)) throw ContractError("gradcheck eps must be positive");
}

}  // namespace

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
  return std::abs(analytic - numeric) / denom;
}

GradcheckReport gradcheck(const InputFn& f, const Tensor& x, double eps, double tol) {
  check_eps(eps);
  GradcheckReport rep;

  Tensor analytic;
  double f0 = 0;
  {
    Tape tape;
    Var xv = tape.leaf(x);
    Var y = f(tape, xv);
    f0 = total(y.value());
    tape.backward(as_scalar(y));
    analytic = tape.has_grad(xv.id()) ? tape.grad(xv) : Tensor::zeros(x.shape());
  }
  auto eval = [&](const Tensor& at) {
    Tape tape(false);
    return f(tape, tape.constant(at)).value();
  };
  const Tensor first = eval(x);
  if (!bit_equal(first, eval(x)) || total(first) != f0) {
    rep.valid = false;
    return rep;
  }

  Tensor point = x;
  const EvalAt at = [&](std::size_t i, real v) {
    const real orig = point[i];
    point[i] = v;
    const double out = total(eval(point));
    point[i] = orig;
    return out;
  };
  const std::vector<real> xs(x.data().begin(), x.data().end());
  const double noise = noise_bound(at, xs, f0);
  for (std::size_t i = 0; i < x.size(); ++i) score(rep, i, analytic[i], at, i, x[i], f0, noise, eps, tol);
  finish(rep, tol);
  return rep;
}

GradcheckReport gradcheck_params(const ParamFn& f, ParamStore& store,
                                 const std::vector<ParamCoord>& coords, double eps, double tol) {
  check_eps(eps);
  GradcheckReport rep;

  double f0 = 0;
  {
    Tape tape;
    Var y = f(tape, store);
    f0 = total(y.value());
    backward(tape, as_scalar(y), store);
  }
  std::vector<double> analytic;
  for (const auto& c : coords) analytic.push_back(store.get(c.name).grad.data()[c.index]);

  auto eval = [&]() {
    Tape tape(false);
    return f(tape, store).value();
  };
  const Tensor first = eval();
  if (!bit_equal(first, eval()) || total(first) != f0) {
    rep.valid = false;
    return rep;
  }

  std::vector<real*> slots;
  std::vector<real> xs;
  for (const auto& c : coords) {
    slots.push_back(&store.get(c.name).value.data()[c.index]);
    xs.push_back(*slots.back());
  }
  const EvalAt at = [&](std::size_t k, real v) {
    const real orig = *slots[k];
    *slots[k] = v;
    const double out = total(eval());
    *slots[k] = orig;
    return out;
  };
  const double noise = noise_bound(at, xs, f0);
  for (std::size_t k = 0; k < coords.size(); ++k) score(rep, k, analytic[k], at, k, xs[k], f0, noise, eps, tol);
  finish(rep, tol);
  return rep;
}

std::vector<ParamCoord> sample_param_coords(const ParamStore& store, std::size_t count,
                                            unsigned long long seed) {
  std::vector<std::pair<std::string, std::size_t>> ranges;
  std::size_t total = 0;
  for (const auto& [name, p] : store) {
    if (!p.trainable) continue;
    ranges.emplace_back(name, p.value.size());
    total += p.value.size();
  }
  if (count > total) throw ContractError("asked for more coordinates than trainable scalars");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, total - 1);
  std::set<std::size_t> chosen;
  while (chosen.size() < count) chosen.insert(pick(rng));
  std::vector<ParamCoord> out;
  for (std::size_t flat : chosen) {
    for (const auto& [name, n] : ranges) {
      if (flat < n) {
        out.push_back({name, flat});
        break;
      }
      flat -= n;
    }
  }
  return out;
}

}  // namespace rdte
