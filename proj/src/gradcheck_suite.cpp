// SPDX-License-Identifier: Apache-2.0
#include "rdte/gradcheck_suite.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <random>

#include "rdte/asbe.hpp"
#include "rdte/errors.hpp"
#include "rdte/eulerff.hpp"
#include "rdte/hvda.hpp"
#include "rdte/model.hpp"
#include "rdte/stairconv.hpp"

namespace rdte {

namespace {

// A checked coordinate should have |gradient| >= kFloor: below it the
// central difference of a float32 function mostly measures rounding.
constexpr int kMaxDraws = 1000;
constexpr double kFloor = 0.1;

Tensor uniform(const Shape& shape, Rng& rng, double lo = -1, double hi = 1) {
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor t(shape);
  for (auto& v : t.data()) v = real(d(rng));
  return t;
}

double min_abs(const std::vector<double>& g) {
  double m = INFINITY;
  for (double v : g) m = std::min(m, std::abs(v));
  return m;
}

// w * y, which the checker sums to <w, y>: a random projection keeps the
// sum from cancelling through normalization layers.
Var project(Tape& tape, const Var& y, const Tensor& w) { return mul(y, tape.constant(w)); }

using LayerFn = std::function<Var(Context&, const Var&)>;

// Everything one layer check needs; shared by the input and parameter cases.
struct Subject {
  ParamStore store;
  LayerFn layer;
  Shape input;
  Mode mode = Mode::train;
  double lo = -1, hi = 1;

  Shape output_shape() {
    Tape tape(false);
    Context ctx{tape, store, mode};
    return layer(ctx, tape.constant(Tensor(input))).shape();
  }
};

// Draws (x, w) until every input coordinate has |df/dx| >= floor.
GradcheckReport check_input(Subject& s, std::uint64_t seed, double eps, double tol) {
  Rng rng(seed);
  const Shape out = s.output_shape();
  Tensor best_x, best_w;
  double best = -1;
  for (int draw = 0; draw < kMaxDraws && best < kFloor; ++draw) {
    Tensor x = uniform(s.input, rng, s.lo, s.hi), w = uniform(out, rng);
    Tape tape;
    Var xv = tape.leaf(x);
    Context ctx{tape, s.store, s.mode};
    tape.backward(sum(project(tape, s.layer(ctx, xv), w)));
    const Tensor g = tape.grad(xv);
    const double m = min_abs(std::vector<double>(g.data().begin(), g.data().end()));
    if (m > best) best = m, best_x = x, best_w = w;
  }
  return gradcheck(
      [&](Tape& tape, const Var& x) {
        Context ctx{tape, s.store, s.mode};
        return project(tape, s.layer(ctx, x), best_w);
      },
      best_x, eps, tol);
}

// Entries whose current gradient reaches the floor, per trainable tensor.
// A tensor with none contributes its largest entry instead, so a gradient
// that is wrongly zero everywhere is still checked.
std::vector<std::vector<std::size_t>> informative(const ParamStore& store) {
  std::vector<std::vector<std::size_t>> out;
  for (const auto& [name, p] : store) {
    if (!p.trainable) continue;
    std::vector<std::size_t> idx;
    std::size_t arg = 0;
    for (std::size_t i = 0; i < p.grad.size(); ++i) {
      if (std::abs(double(p.grad[i])) >= kFloor) idx.push_back(i);
      if (std::abs(p.grad[i]) > std::abs(p.grad[arg])) arg = i;
    }
    if (idx.empty()) idx.push_back(arg);
    out.push_back(std::move(idx));
  }
  return out;
}

// Up to `per_tensor` random informative entries of every trainable tensor.
std::vector<ParamCoord> pick_coords(const ParamStore& store, std::size_t per_tensor, Rng& rng) {
  std::vector<ParamCoord> coords;
  auto pools = informative(store);
  std::size_t t = 0;
  for (const auto& [name, p] : store) {
    if (!p.trainable) continue;
    auto& idx = pools[t++];
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(std::min(idx.size(), per_tensor));
    std::sort(idx.begin(), idx.end());
    for (std::size_t i : idx) coords.push_back({name, i});
  }
  return coords;
}

// Parameter gradients at one random (x, w), checked on informative entries.
GradcheckReport check_params(Subject& s, std::uint64_t seed, double eps, double tol) {
  Rng rng(seed);
  const Shape out = s.output_shape();
  const Tensor x = uniform(s.input, rng, s.lo, s.hi), w = uniform(out, rng);
  auto f = [&](Tape& tape, ParamStore& store) {
    Context ctx{tape, store, s.mode};
    return project(tape, s.layer(ctx, tape.constant(x)), w);
  };
  {
    Tape tape;
    backward(tape, sum(f(tape, s.store)), s.store);
  }
  return gradcheck_params(f, s.store, pick_coords(s.store, 6, rng), eps, tol);
}

class Builder {
 public:
  Builder(std::string scope, std::uint64_t seed, std::vector<GradcheckCase>& out)
      : scope_(std::move(scope)), seed_(seed), out_(out) {}

  // A pure function of one input, no parameters.
  void op(const std::string& name, Shape input, LayerFn f, double eps = 1e-2, double lo = -1, double hi = 1) {
    auto s = std::make_shared<Subject>();
    s->layer = std::move(f);
    s->input = std::move(input);
    s->lo = lo, s->hi = hi;
    add(name, eps, [s, seed = next()](double tol, double e) { return check_input(*s, seed, e, tol); });
  }

  // A layer: checked with respect to its input and to its parameters.
  template <typename Init>
  void layer(const std::string& name, Shape input, Init init, LayerFn f, Mode mode = Mode::train,
             double eps = 1e-2) {
    auto s = std::make_shared<Subject>();
    Rng rng(next());
    init(s->store, rng);
    s->layer = std::move(f);
    s->input = std::move(input);
    s->mode = mode;
    add(name, eps, [s, seed = next()](double tol, double e) { return check_input(*s, seed, e, tol); });
    add(name + " params", eps, [s, seed = next()](double tol, double e) { return check_params(*s, seed, e, tol); });
  }

  void custom(const std::string& name, double tol, double eps,
              std::function<GradcheckReport(std::uint64_t seed, double eps, double tol)> run) {
    add(name, eps, [run, seed = next()](double t, double e) { return run(seed, e, t); }, tol);
  }

 private:
  std::uint64_t next() { return seed_ * 1000003u + std::hash<std::string>{}(scope_) + (++count_) * 7919u; }

  void add(const std::string& name, double eps, std::function<GradcheckReport(double, double)> run,
           double tol = 1e-2) {
    out_.push_back({scope_, name, tol, eps, std::move(run)});
  }

  std::string scope_;
  std::uint64_t seed_;
  std::vector<GradcheckCase>& out_;
  std::uint64_t count_ = 0;
};

template <typename L>
auto init_of(L l) {
  return [l](ParamStore& ps, Rng& rng) { l.init(ps, rng); };
}
template <typename L>
LayerFn run_of(L l) {
  return [l](Context& ctx, const Var& x) { return l(ctx, x); };
}

// Scale and shift away from 1 and 0 so their gradients are exercised fully.
void randomize_affine(ParamStore& ps, Rng& rng) {
  for (auto& [name, p] : ps)
    if (name.ends_with(".gamma")) p.value = uniform(p.value.shape(), rng, 0.5, 1.5);
    else if (name.ends_with(".beta")) p.value = uniform(p.value.shape(), rng, -0.5, 0.5);
}

// ---------------------------------------------------------------------------

void tensor_cases(Builder& b) {
  const Shape s{10};
  b.op("silu tanh", s, [](Context&, const Var& v) { return tanh(silu(v)); }, 1e-2, -2, 2);
  b.op("softplus sin", s, [](Context&, const Var& v) { return mul(softplus(v), sin(v)); }, 1e-2, -2, 2);
  b.op("cos exp", s, [](Context&, const Var& v) { return cos(exp(scale(v, 0.5))); }, 1e-2, -2, 2);
  b.op("sigmoid sub", s, [](Context&, const Var& v) { return sub(sigmoid(v), scale(v, 0.3)); }, 1e-2, -2, 2);
  b.op("relu mul", s, [](Context&, const Var& v) { return mul(relu(v), add_scalar(v, 1)); }, 1e-2, -2, 2);
  b.op("softmax rows", s, [](Context&, const Var& v) {
    Var p = softmax_rows(reshape(v, {2, 5}));
    return mul(p, p);
  }, 1e-2, -2, 2);
  b.op("log softmax rows", s, [](Context&, const Var& v) { return sin(log_softmax_rows(reshape(v, {5, 2}))); },
       1e-2, -2, 2);
  b.op("matmul", s, [](Context&, const Var& v) {
    Var m = reshape(v, {2, 5});
    Var a = reshape(slice_last(m, 0, 4), {4, 2});
    return tanh(matmul(a, m));
  }, 1e-2, -2, 2);
  b.op("matmul_nt", s, [](Context&, const Var& v) {
    Var m = reshape(v, {5, 2});
    return sin(matmul_nt(m, tanh(m)));
  }, 1e-2, -2, 2);
  b.op("concat interleave", s, [](Context&, const Var& v) {
    Var m = reshape(v, {5, 2});
    Var c = concat_last({m, sigmoid(m)});
    return mul(interleave_halves(c), c);
  }, 1e-2, -2, 2);
  b.op("batch slicing", Shape{2, 5}, [](Context&, const Var& v) {
    return tanh(concat_first({select_first(v, 1), scale(select_first(v, 0), 2)}));
  }, 1e-2, -2, 2);
  b.op("add_n mean", s, [](Context&, const Var& v) {
    return add(add_n({sin(v), mul(v, v), scale(v, 0.5)}), mean(tanh(v)));
  }, 1e-2, -2, 2);
}

void nn_cases(Builder& b) {
  const Conv2d conv{"conv", Conv2dSpec{3, 3, 2, 1, 0, 2, 0, 4, 3, 1}};
  b.layer("conv2d", {1, 6, 6, 4}, init_of(conv), run_of(conv));
  const Conv2d grouped{"gconv", Conv2dSpec::same(1, 3, 4, 2, 2)};
  b.layer("grouped conv2d", {1, 6, 6, 4}, init_of(grouped), run_of(grouped));
  const ConvTranspose2d up{"up", 4, 2};
  b.layer("conv2d_transpose", {1, 3, 3, 4}, init_of(up), run_of(up));
  b.op("pad2d", {1, 3, 3, 2}, [](Context&, const Var& x) { return pad2d(x, 1, 2, 0, 3); });
  b.op("avg_pool", {1, 6, 6, 4}, [](Context&, const Var& x) { return avg_pool(x, 3); });

  const BatchNorm bn{"bn", 4};
  auto bn_init = [bn](ParamStore& ps, Rng& rng) {
    bn.init(ps);
    randomize_affine(ps, rng);
    ps.get("bn.running_mean").value = uniform({4}, rng, -0.5, 0.5);
    ps.get("bn.running_var").value = uniform({4}, rng, 0.5, 1.5);
  };
  b.layer("batch_norm train", {2, 3, 3, 4}, bn_init, run_of(bn), Mode::train);
  b.layer("batch_norm eval", {1, 3, 3, 4}, bn_init, run_of(bn), Mode::eval);
  const LayerNorm ln{"ln", 4};
  b.layer("layer_norm", {1, 3, 3, 4}, [ln](ParamStore& ps, Rng& rng) {
    ln.init(ps);
    randomize_affine(ps, rng);
  }, run_of(ln));
  const Mlp mlp{"mlp", 4, 4};
  b.layer("mlp", {1, 2, 2, 4}, init_of(mlp), run_of(mlp));
  // ReLUs behind a train-mode BN put many kinks within 1e-2 of the input.
  const ResBlock rb{"rb", 4};
  b.layer("res_block", {1, 3, 3, 4}, [rb](ParamStore& ps, Rng& rng) {
    rb.init(ps, rng);
    randomize_affine(ps, rng);
  }, run_of(rb), Mode::train, 3e-3);
}

void stair_cases(Builder& b) {
  for (StairAxis axis : {StairAxis::horizontal, StairAxis::vertical})
    for (int level : {1, 2})
      for (StairSide side : {StairSide::first, StairSide::second}) {
        const std::string name = std::string("stair_pad ") + (axis == StairAxis::horizontal ? "h" : "v") +
                                 std::to_string(level) + (side == StairSide::first ? "a" : "b");
        b.op(name, {1, 3, 3, 2}, [=](Context&, const Var& x) { return stair_pad(x, axis, level, side, 2); });
      }
  for (StairAxis axis : {StairAxis::horizontal, StairAxis::vertical}) {
    const StairConv sc{"sc", axis, 3, 2, 4};
    b.layer(axis == StairAxis::horizontal ? "stair_conv h" : "stair_conv v", {1, 4, 4, 2},
            [sc](ParamStore& ps, Rng& rng) {
              sc.init(ps, rng);
              randomize_affine(ps, rng);
            },
            run_of(sc));
  }
}

void hvda_cases(Builder& b) {
  b.op("spatial_attention", {1, 2, 3, 4}, [](Context&, const Var& x) {
    return spatial_attention(slice_last(x, 0, 1), slice_last(x, 1, 1), slice_last(x, 2, 2), 1.5);
  });
  const HvdaBranch br{"br", 2};
  b.layer("hvda_branch", {1, 4, 4, 2}, init_of(br), run_of(br), Mode::train, 3e-3);
  const Hvda att{"hvda", 2};
  b.layer("hvda_attention", {1, 4, 4, 2}, init_of(att), run_of(att), Mode::train, 3e-3);
  const PlainAttention plain{"pa", 4};
  b.layer("plain_attention", {1, 3, 3, 4}, init_of(plain), run_of(plain));
  const DetailsTransformer dt{"dt", 4};
  b.layer("details_transformer", {1, 4, 4, 4}, init_of(dt), run_of(dt), Mode::train, 3e-3);
}

void asbe_cases(Builder& b) {
  // Sizes stay away from integers only by chance; bilinear kinks are
  // excluded by the checker.
  b.op("rect_sample x", {1, 4, 4, 2}, [](Context& ctx, const Var& x) {
    Tensor sz({1, 4, 4, 2});
    for (std::size_t i = 0; i < sz.size(); ++i) sz[i] = real(1.3 + 0.37 * double(i % 11));
    return rect_sample(x, ctx.tape.constant(sz), 3);
  });
  b.op("rect_sample sizes", {1, 4, 4, 2}, [](Context& ctx, const Var& s) {
    Tensor x({1, 4, 4, 1});
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = real(std::sin(1.7 * double(i)) + 0.3 * double(i % 3));
    return rect_sample(ctx.tape.constant(x), s, 3);
  }, 1e-2, 1.2, 4.8);
  const ARConv ar{"ar", 2, 3, 5};
  b.layer("arconv", {1, 5, 5, 2}, init_of(ar), run_of(ar));
  const Asbe stem{"asbe", 1, 2, 2, 3, 5};
  b.op("boundary_cue", {1, 6, 6, 1}, [](Context&, const Var& x) { return sub(x, avg_pool(x, 3)); });
  b.layer("asbe", {1, 6, 6, 1}, init_of(stem), run_of(stem), Mode::train, 3e-3);
}

void euler_cases(Builder& b) {
  const EulerStream es{"es", 2};
  for (EulerAxis axis : {EulerAxis::horizontal, EulerAxis::vertical})
    b.layer(axis == EulerAxis::horizontal ? "euler_expand h" : "euler_expand v", {1, 4, 4, 2}, init_of(es),
            [es, axis](Context& ctx, const Var& x) { return es.expand(ctx, x, axis).expanded; });
  b.layer("euler_stream", {1, 4, 4, 2}, init_of(es), run_of(es));
  // Skip and decoder features stacked on the batch axis.
  const EulerFF ff{"ff", 2};
  b.layer("eulerff_fuse", {2, 4, 4, 2}, init_of(ff),
          [ff](Context& ctx, const Var& x) { return ff(ctx, select_first(x, 0), select_first(x, 1)); });
}

void model_cases(Builder& b) {
  b.custom("segmentation_loss", 1e-2, 1e-2, [](std::uint64_t seed, double eps, double tol) {
    Rng rng(seed);
    Tensor labels({2, 3, 3});
    std::uniform_int_distribution<int> cls(0, 2);
    for (auto& v : labels.data()) v = real(cls(rng));
    return gradcheck([labels](Tape&, const Var& z) { return segmentation_loss(z, labels).total; },
                     uniform({2, 3, 3, 3}, rng, -2, 2), eps, tol);
  });
  // Eval mode: with batch statistics over a handful of deep pixels, every
  // parameter step moves all BN kinks at once.
  b.custom("model subset", 2e-2, 1e-2, [](std::uint64_t seed, double eps, double tol) {
    ModelConfig c;
    c.height = c.width = 32;
    c.base_width = 2;
    c.seed = seed;
    Model m(c);
    Rng rng(seed);
    auto f = [&m](const Tensor& x) {
      return [&m, x](Tape& tape, ParamStore& store) {
        Context ctx{tape, store, Mode::eval};
        return m.forward(ctx, tape.constant(x));
      };
    };
    const Tensor x = uniform({1, 32, 32, 1}, rng, 0, 1);
    {
      Tape tape;
      backward(tape, sum(f(x)(tape, m.params())), m.params());
    }
    // 20 entries drawn uniformly over all informative scalars.
    std::vector<ParamCoord> pool;
    auto pools = informative(m.params());
    std::size_t t = 0;
    for (const auto& [name, p] : m.params()) {
      if (!p.trainable) continue;
      for (std::size_t i : pools[t++]) pool.push_back({name, i});
    }
    std::shuffle(pool.begin(), pool.end(), rng);
    pool.resize(std::min<std::size_t>(pool.size(), 20));
    return gradcheck_params(f(x), m.params(), pool, eps, tol);
  });
}

}  // namespace

const std::vector<std::string>& gradcheck_scopes() {
  static const std::vector<std::string> scopes{"tensor", "nn", "stair", "hvda", "asbe", "euler", "model"};
  return scopes;
}

std::vector<GradcheckCase> gradcheck_cases(const std::string& scope, std::uint64_t seed) {
  const auto& all = gradcheck_scopes();
  if (scope != "all" && std::find(all.begin(), all.end(), scope) == all.end())
    throw ConfigError("unknown gradcheck scope '" + scope + "' (expected tensor, nn, stair, hvda, asbe, euler, model or all)");
  std::vector<GradcheckCase> out;
  for (const auto& s : all) {
    if (scope != "all" && scope != s) continue;
    Builder b(s, seed, out);
    if (s == "tensor") tensor_cases(b);
    else if (s == "nn") nn_cases(b);
    else if (s == "stair") stair_cases(b);
    else if (s == "hvda") hvda_cases(b);
    else if (s == "asbe") asbe_cases(b);
    else if (s == "euler") euler_cases(b);
    else model_cases(b);
  }
  return out;
}

}  // namespace rdte
