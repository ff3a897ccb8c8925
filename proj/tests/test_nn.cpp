// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <memory>

#include "doctest.h"
#include "rdte/errors.hpp"
#include "rdte/gradcheck.hpp"
#include "rdte/nn.hpp"
#include "test_util.hpp"

using namespace rdte;
using rdte::testing::all_close;
using rdte::testing::random_tensor;
using rdte::testing::run_layer;

namespace {

// Direct-summation oracle, written independently of the im2col path.
Tensor conv_oracle(const Tensor& x, const Conv2dSpec& s, const Tensor& w, const Tensor* b) {
  const long N = long(x.dim(0)), H = long(x.dim(1)), W = long(x.dim(2));
  const long Ho = long(s.out_h(x.dim(1))), Wo = long(s.out_w(x.dim(2)));
  const long cin_g = long(s.in_channels / s.groups), cout_g = long(s.out_channels / s.groups);
  Tensor out({std::size_t(N), std::size_t(Ho), std::size_t(Wo), s.out_channels});
  for (long n = 0; n < N; ++n)
    for (long oy = 0; oy < Ho; ++oy)
      for (long ox = 0; ox < Wo; ++ox)
        for (long co = 0; co < long(s.out_channels); ++co) {
          double acc = b ? (*b)[std::size_t(co)] : 0.0;
          const long g = co / cout_g;
          for (long ky = 0; ky < long(s.kernel_h); ++ky)
            for (long kx = 0; kx < long(s.kernel_w); ++kx)
              for (long ci = 0; ci < cin_g; ++ci) {
                const long iy = oy * long(s.stride) + ky - long(s.pad_top);
                const long ix = ox * long(s.stride) + kx - long(s.pad_left);
                if (iy < 0 || ix < 0 || iy >= H || ix >= W) continue;
                acc += double(x.at({std::size_t(n), std::size_t(iy), std::size_t(ix), std::size_t(g * cin_g + ci)})) *
                       w.at({std::size_t(ky), std::size_t(kx), std::size_t(ci), std::size_t(co)});
              }
          out.at({std::size_t(n), std::size_t(oy), std::size_t(ox), std::size_t(co)}) = real(acc);
        }
  return out;
}

Tensor run_conv(const Tensor& x, const Conv2dSpec& s, const Tensor& w, const Tensor* b) {
  Tape tape(false);
  std::optional<Var> bv;
  if (b) bv = tape.constant(*b);
  return conv2d(tape.constant(x), s, tape.constant(w), bv).value();
}

Tensor run_deconv(const Tensor& x, const Conv2dSpec& s, const Tensor& w) {
  Tape tape(false);
  return conv2d_transpose(tape.constant(x), s, tape.constant(w)).value();
}

Conv2dSpec spec_of(std::size_t kh, std::size_t kw, std::size_t stride, std::size_t pt, std::size_t pb,
                   std::size_t pl, std::size_t pr, std::size_t cin, std::size_t cout, std::size_t groups = 1) {
  Conv2dSpec s;
  s.kernel_h = kh;
  s.kernel_w = kw;
  s.stride = stride;
  s.pad_top = pt;
  s.pad_bottom = pb;
  s.pad_left = pl;
  s.pad_right = pr;
  s.in_channels = cin;
  s.out_channels = cout;
  s.groups = groups;
  return s;
}

}  // namespace

TEST_CASE("conv2d examples") {
  std::mt19937_64 rng(6);
  SUBCASE("1x1 identity") {
    Tensor x = random_tensor({1, 3, 3, 2}, rng);
    Tensor w({1, 1, 2, 2}, {1, 0, 0, 1});
    CHECK(all_close(run_conv(x, Conv2dSpec::valid(1, 1, 2, 2), w, nullptr), x, 0));
  }
  SUBCASE("3x3 all ones over all-ones input") {
    Tensor x({1, 5, 5, 1}, 1);
    Tensor w({3, 3, 1, 1}, 1);
    Tensor y = run_conv(x, Conv2dSpec::same(3, 3, 1, 1), w, nullptr);
    CHECK(y.at({0, 2, 2, 0}) == 9);
    CHECK(y.at({0, 0, 0, 0}) == 4);
  }
  SUBCASE("2x2 stride 2 halves extents") {
    Tensor x({1, 8, 8, 3});
    Tensor y = run_conv(x, Conv2dSpec::valid(2, 2, 3, 6, 2), Tensor({2, 2, 3, 6}), nullptr);
    CHECK(y.shape() == Shape{1, 4, 4, 6});
  }
  SUBCASE("empty output is a shape error") {
    CHECK_THROWS_AS(run_conv(Tensor({1, 2, 2, 1}), Conv2dSpec::valid(3, 3, 1, 1), Tensor({3, 3, 1, 1}), nullptr),
                    ShapeError);
  }
  SUBCASE("groups must divide channels") {
    CHECK_THROWS_AS(run_conv(Tensor({1, 4, 4, 3}), spec_of(1, 1, 1, 0, 0, 0, 0, 3, 2, 2), Tensor({1, 1, 1, 2}), nullptr),
                    ConfigError);
  }
}

TEST_CASE("conv2d matches the direct-summation oracle") {
  std::mt19937_64 rng(6);
  const std::vector<Conv2dSpec> specs = {
      spec_of(3, 3, 1, 1, 1, 1, 1, 3, 4),
      spec_of(3, 3, 1, 1, 2, 0, 3, 2, 5),   // asymmetric
      spec_of(6, 6, 1, 6, 0, 3, 3, 2, 3),   // stair-style level-2 padding
      spec_of(2, 2, 2, 0, 0, 0, 0, 4, 8),   // downsampling
      spec_of(1, 3, 1, 0, 0, 1, 1, 4, 2, 2),  // grouped
      spec_of(3, 1, 1, 1, 1, 0, 0, 6, 3, 3),  // grouped vertical
      spec_of(1, 1, 1, 0, 0, 0, 0, 5, 3),
      spec_of(1, 1, 1, 0, 1, 0, 1, 5, 3),   // pointwise with trailing pad
  };
  for (const auto& s : specs) {
    Tensor x = random_tensor({2, 6, 7, s.in_channels}, rng);
    Tensor w = random_tensor(s.weight_shape(), rng);
    Tensor b = random_tensor({s.out_channels}, rng);
    CHECK(all_close(run_conv(x, s, w, &b), conv_oracle(x, s, w, &b), 1e-4));
  }
}

TEST_CASE("conv2d is linear") {
  std::mt19937_64 rng(6);
  const Conv2dSpec s = spec_of(3, 3, 1, 2, 0, 1, 1, 3, 2);
  Tensor w = random_tensor(s.weight_shape(), rng);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor x = random_tensor({1, 5, 5, 3}, rng), z = random_tensor({1, 5, 5, 3}, rng);
    const real a = real(0.7), c = real(-1.3);
    Tensor mix(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) mix[i] = a * x[i] + c * z[i];
    Tensor lhs = run_conv(mix, s, w, nullptr);
    Tensor cx = run_conv(x, s, w, nullptr), cz = run_conv(z, s, w, nullptr);
    Tensor rhs(cx.shape());
    for (std::size_t i = 0; i < cx.size(); ++i) rhs[i] = a * cx[i] + c * cz[i];
    CHECK(all_close(lhs, rhs, 1e-4));
  }
}

TEST_CASE("conv2d_transpose") {
  std::mt19937_64 rng(6);
  ConvTranspose2d up{"up", 6, 3};
  SUBCASE("doubles extents") {
    Tensor w = random_tensor({2, 2, 3, 6}, rng);
    CHECK(run_deconv(Tensor({1, 4, 4, 6}), up.spec(), w).shape() == Shape{1, 8, 8, 3});
  }
  SUBCASE("zero input gives the bias") {
    ParamStore ps;
    Rng r(1);
    up.init(ps, r);
    ps.get("up.b").value = Tensor({3}, {1, 2, 3});
    Tensor y = run_layer(up, ps, Tensor({1, 2, 2, 6}));
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == real(i % 3 + 1));
  }
  SUBCASE("adjoint of the stride-2 conv") {
    for (int trial = 0; trial < 10; ++trial) {
      Tensor w = random_tensor({2, 2, 3, 6}, rng);  // conv: 3 -> 6 channels
      Tensor x = random_tensor({2, 8, 6, 3}, rng);
      Tensor y = random_tensor({2, 4, 3, 6}, rng);
      const double lhs = dot(run_conv(x, Conv2dSpec::valid(2, 2, 3, 6, 2), w, nullptr), y);
      const double rhs = dot(x, run_deconv(y, up.spec(), w));
      CHECK(std::abs(lhs - rhs) <= 1e-4 * std::max(1.0, std::abs(lhs)));
    }
  }
  SUBCASE("only 2x2 stride 2") {
    Conv2dSpec bad = up.spec();
    bad.stride = 1;
    CHECK_THROWS_AS(run_deconv(Tensor({1, 2, 2, 6}), bad, Tensor({2, 2, 3, 6})), ConfigError);
  }
}

TEST_CASE("batch_norm") {
  std::mt19937_64 rng(6);
  BatchNorm bn{"bn", 3};
  ParamStore ps;
  bn.init(ps);
  Tensor x = random_tensor({2, 4, 4, 3}, rng, -3, 5);

  auto channel_stats = [](const Tensor& y, std::size_t c) {
    double s = 0, ss = 0;
    const std::size_t m = y.size() / 3;
    for (std::size_t i = c; i < y.size(); i += 3) s += y[i];
    const double mu = s / double(m);
    for (std::size_t i = c; i < y.size(); i += 3) ss += (y[i] - mu) * (y[i] - mu);
    return std::pair{mu, ss / double(m)};
  };

  SUBCASE("train mode normalizes") {
    Tensor y = run_layer(bn, ps, x, Mode::train);
    for (std::size_t c = 0; c < 3; ++c) {
      auto [mu, var] = channel_stats(y, c);
      CHECK(std::abs(mu) <= 1e-4);
      CHECK(std::abs(var - 1) <= 1e-3);
    }
    CHECK(ps.get("bn.running_mean").value[0] != 0);
    for (auto v : ps.get("bn.running_var").value.data()) CHECK(v >= 0);
  }
  SUBCASE("affine") {
    ps.get("bn.gamma").value = Tensor::full({3}, 2);
    ps.get("bn.beta").value = Tensor::full({3}, 1);
    Tensor y = run_layer(bn, ps, x, Mode::train);
    for (std::size_t c = 0; c < 3; ++c) {
      auto [mu, var] = channel_stats(y, c);
      CHECK(std::abs(mu - 1) <= 1e-4);
      CHECK(std::abs(std::sqrt(var) - 2) <= 1e-3);
    }
  }
  SUBCASE("eval mode plugs in running stats") {
    ps.get("bn.gamma").value = Tensor({3}, {1.5, -2, 0.5});
    Tensor y = run_layer(bn, ps, x, Mode::eval);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double g = ps.get("bn.gamma").value[i % 3];
      CHECK(std::abs(y[i] - g * x[i] / std::sqrt(1 + 1e-5)) <= 1e-5);
    }
  }
  SUBCASE("single value per channel in training is an error") {
    CHECK_THROWS_AS(run_layer(bn, ps, Tensor({1, 1, 1, 3}), Mode::train), ShapeError);
    CHECK_NOTHROW(run_layer(bn, ps, Tensor({1, 1, 1, 3}), Mode::eval));
  }
}

TEST_CASE("layer_norm") {
  std::mt19937_64 rng(6);
  LayerNorm ln{"ln", 2};
  ParamStore ps;
  ln.init(ps);
  SUBCASE("constant channels give beta") {
    ps.get("ln.beta").value = Tensor({2}, {0.25, -1});
    Tensor y = run_layer(ln, ps, Tensor({1, 2, 2, 2}, 3));
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == ps.get("ln.beta").value[i % 2]);
  }
  SUBCASE("[1,3] -> [-1,1]") {
    Tensor y = run_layer(ln, ps, Tensor({1, 1, 1, 2}, {1, 3}));
    CHECK(std::abs(y[0] + 1) < 1e-4);
    CHECK(std::abs(y[1] - 1) < 1e-4);
  }
  SUBCASE("shift invariance") {
    LayerNorm ln4{"ln4", 4};
    ln4.init(ps);
    Tensor x = random_tensor({1, 3, 3, 4}, rng);
    Tensor xs = x;
    for (auto& v : xs.data()) v += real(2.5);
    CHECK(all_close(run_layer(ln4, ps, x), run_layer(ln4, ps, xs), 1e-5));
  }
}

TEST_CASE("avg_pool") {
  std::mt19937_64 rng(6);
  Tape tape(false);
  SUBCASE("constants are preserved") {
    Tensor y = avg_pool(tape.constant(Tensor({1, 5, 4, 2}, real(0.3))), 3).value();
    for (auto v : y.data()) CHECK(std::abs(v - real(0.3)) < 1e-6);
  }
  SUBCASE("impulse") {
    Tensor x({1, 3, 3, 1});
    x.at({0, 1, 1, 0}) = 1;
    CHECK(std::abs(avg_pool(tape.constant(x), 3).value().at({0, 1, 1, 0}) - real(1.0 / 9)) < 1e-7);
  }
  SUBCASE("1x1 is identity") {
    Tensor x = random_tensor({1, 4, 4, 3}, rng);
    CHECK(bit_equal(avg_pool(tape.constant(x), 1).value(), x));
  }
  SUBCASE("even kernel rejected") { CHECK_THROWS_AS(avg_pool(tape.constant(Tensor({1, 4, 4, 1})), 2), ConfigError); }
}

TEST_CASE("mlp") {
  std::mt19937_64 rng(6);
  Mlp mlp{"mlp", 3, 4};
  ParamStore ps;
  Rng r(2);
  mlp.init(ps, r);
  SUBCASE("zero weights give zero") {
    rdte::testing::fill_params(ps, "mlp", 0);
    Tensor y = run_layer(mlp, ps, random_tensor({1, 2, 2, 3}, rng));
    for (auto v : y.data()) CHECK(v == 0);
  }
  SUBCASE("identity-equivalent weights recover the input") {
    // fc1 copies x into the first 3 hidden units shifted by +20, where
    // SiLU(z) = z * sigmoid(z) ~= z to within 1e-7 relative; fc2 undoes the shift.
    rdte::testing::fill_params(ps, "mlp", 0);
    Tensor& w1 = ps.get("mlp.fc1.w").value;
    Tensor& w2 = ps.get("mlp.fc2.w").value;
    for (std::size_t c = 0; c < 3; ++c) {
      w1.at({0, 0, c, c}) = 1;
      ps.get("mlp.fc1.b").value[c] = 20;
      w2.at({0, 0, c, c}) = 1;
      ps.get("mlp.fc2.b").value[c] = -20;
    }
    Tensor x = random_tensor({1, 2, 2, 3}, rng);
    CHECK(all_close(run_layer(mlp, ps, x), x, 1e-4));
  }
}

TEST_CASE("res_block") {
  std::mt19937_64 rng(6);
  ResBlock rb{"rb", 4};
  ParamStore ps;
  Rng r(3);
  rb.init(ps, r);
  Tensor x = random_tensor({2, 5, 5, 4}, rng);
  CHECK(run_layer(rb, ps, x).shape() == x.shape());
  SUBCASE("zero convolutions leave ReLU(x)") {
    for (const char* n : {"rb.conv1.w", "rb.conv2.w"})
      for (auto& v : ps.get(n).value.data()) v = 0;
    Tensor y = run_layer(rb, ps, x);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(y[i] == std::max(x[i], real(0)));
  }
  SUBCASE("channel mismatch") { CHECK_THROWS_AS(run_layer(rb, ps, Tensor({1, 4, 4, 3})), ShapeError); }
}

// Every op in the module is differentiated correctly on small random inputs.
TEST_CASE("nn gradchecks") { rdte::testing::check_gradcheck_scope("nn"); }
