// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <sstream>

#include "doctest.h"
#include "rdte/errors.hpp"
#include "rdte/gradcheck.hpp"
#include "rdte/ops.hpp"
#include "rdte/rdtf.hpp"
#include "test_util.hpp"

using namespace rdte;
using rdte::testing::all_close;
using rdte::testing::random_tensor;

TEST_CASE("tensor construction") {
  Tensor z({2, 2}, 0);
  CHECK(z.size() == 4);
  for (auto v : z.data()) CHECK(v == 0);

  Tensor t({1, 3}, std::vector<real>{1, 2, 3});
  CHECK(t.at({0, 2}) == 3);

  CHECK_THROWS_AS(Tensor({2, 3}, std::vector<real>(5)), ShapeError);
  CHECK_THROWS_AS(Tensor({2, 0}), ShapeError);
}

TEST_CASE("tensor owns its data") {
  std::vector<real> buf{1, 2, 3, 4};
  Tensor t({2, 2}, buf);
  buf[0] = 99;
  CHECK(t[0] == 1);
}

TEST_CASE("index and coordinate round trip") {
  Tensor t({2, 3, 4, 5});
  for (std::size_t i = 0; i < t.size(); ++i) {
    auto c = t.coords(i);
    CHECK(t.offset(c) == i);
  }
  CHECK(t.offset({1, 2, 3, 4}) == t.size() - 1);
  CHECK_THROWS_AS(t.offset({2, 0, 0, 0}), ShapeError);
}

TEST_CASE("elementwise examples") {
  Tape tape;
  auto v = [&](std::vector<real> d) { return tape.constant(Tensor({d.size()}, d)); };
  CHECK(all_close(relu(v({-1, 0, 2})).value(), Tensor({3}, {0, 0, 2}), 0));
  CHECK(silu(v({0})).value()[0] == 0);
  CHECK(all_close(add(v({1, 2}), v({3, 4})).value(), Tensor({2}, {4, 6}), 0));
  CHECK_THROWS_AS(add(v({1, 2}), v({1, 2, 3})), ShapeError);
  CHECK_THROWS_AS(elementwise(Elementwise::add, v({1})), ContractError);
}

TEST_CASE("channel broadcast") {
  Tape tape;
  Var a = tape.leaf(Tensor({2, 3}, {1, 2, 3, 4, 5, 6}));
  Var b = tape.leaf(Tensor({3}, {10, 20, 30}));
  Var y = mul(a, b);
  CHECK(all_close(y.value(), Tensor({2, 3}, {10, 40, 90, 40, 100, 180}), 0));
  tape.backward(sum(y));
  CHECK(all_close(tape.grad(b), Tensor({3}, {5, 7, 9}), 0));
  CHECK(all_close(tape.grad(a), Tensor({2, 3}, {10, 20, 30, 10, 20, 30}), 0));
}

TEST_CASE("matmul examples") {
  Tape tape;
  Var i2 = tape.constant(Tensor({2, 2}, {1, 0, 0, 1}));
  Var m = tape.constant(Tensor({2, 2}, {1, 2, 3, 4}));
  CHECK(all_close(matmul(i2, m).value(), m.value(), 0));
  Var r = tape.constant(Tensor({1, 2}, {1, 2}));
  Var c = tape.constant(Tensor({2, 1}, {3, 4}));
  CHECK(matmul(r, c).value()[0] == 11);
  CHECK(all_close(matmul_nt(m, i2).value(), m.value(), 0));
  CHECK(all_close(matmul_nt(i2, m).value(), Tensor({2, 2}, {1, 3, 2, 4}), 0));
  CHECK_THROWS_AS(matmul(tape.constant(Tensor({2, 3})), tape.constant(Tensor({4, 2}))), ShapeError);
}

TEST_CASE("softmax_rows examples") {
  Tape tape;
  auto row = [&](real a, real b) { return softmax_rows(tape.constant(Tensor({1, 2}, {a, b}))).value(); };
  CHECK(all_close(row(0, 0), Tensor({1, 2}, {0.5, 0.5}), 1e-7));
  CHECK(all_close(row(1000, 1000), Tensor({1, 2}, {0.5, 0.5}), 1e-7));
  // exp(0) : exp(ln 3) = 1 : 3
  CHECK(all_close(row(0, real(std::log(3.0))), Tensor({1, 2}, {0.25, 0.75}), 1e-6));

  Var nan_in = tape.constant(Tensor({1, 2}, {real(NAN), 0}));
  Var out = softmax_rows(nan_in);
  CHECK(std::isnan(out.value()[0]));
  CHECK_THROWS_AS(check_finite(out, "softmax"), NumericError);
}

TEST_CASE("softmax rows sum to one and ignore row shifts") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor x = random_tensor({5, 7}, rng, -10, 10);
    Tensor shifted = x;
    for (std::size_t r = 0; r < 5; ++r)
      for (std::size_t c = 0; c < 7; ++c) shifted[r * 7 + c] += real(r * 3.5 - 4);
    Tape tape;
    Tensor y = softmax_rows(tape.constant(x)).value();
    Tensor ys = softmax_rows(tape.constant(shifted)).value();
    for (std::size_t r = 0; r < 5; ++r) {
      double s = 0;
      for (std::size_t c = 0; c < 7; ++c) {
        CHECK(y[r * 7 + c] >= 0);
        s += y[r * 7 + c];
      }
      CHECK(std::abs(s - 1) <= 1e-5);
    }
    CHECK(all_close(y, ys, 1e-5));
  }
}

TEST_CASE("matmul is associative on small random matrices") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    Tape tape;
    Var a = tape.constant(random_tensor({3, 4}, rng));
    Var b = tape.constant(random_tensor({4, 5}, rng));
    Var c = tape.constant(random_tensor({5, 2}, rng));
    CHECK(all_close(matmul(matmul(a, b), c).value(), matmul(a, matmul(b, c)).value(), 1e-4));
  }
}

TEST_CASE("backward examples") {
  {
    ParamStore ps;
    ps.add("w", Tensor({3}, {0.5, -1, 2}));
    Tape tape;
    Var w = tape.param(ps, "w");
    backward(tape, sum(w), ps);
    CHECK(all_close(ps.get("w").grad, Tensor({3}, {1, 1, 1}), 0));
  }
  {
    ParamStore ps;
    ps.add("w", Tensor({2}, {1, 2}));
    ps.add("unused", Tensor({2}, {5, 5}));
    ps.get("unused").grad[0] = 7;
    Tape tape;
    Var w = tape.param(ps, "w");
    backward(tape, sum(mul(w, w)), ps);
    CHECK(all_close(ps.get("w").grad, Tensor({2}, {2, 4}), 0));
    CHECK(all_close(ps.get("unused").grad, Tensor({2}, {0, 0}), 0));
  }
  {
    Tape tape;
    Var w = tape.leaf(Tensor({2}, {1, 2}));
    CHECK_THROWS_AS(tape.backward(w), ContractError);
  }
}

TEST_CASE("backward of sum gives ones for any shape") {
  std::mt19937_64 rng(3);
  for (const Shape& s : {Shape{1}, Shape{7}, Shape{2, 3}, Shape{2, 3, 4, 5}}) {
    Tape tape;
    Var x = tape.leaf(random_tensor(s, rng));
    tape.backward(sum(x));
    for (auto g : tape.grad(x).data()) CHECK(g == 1);
  }
}

TEST_CASE("param store invariants") {
  ParamStore ps;
  ps.add("a.w", Tensor({2, 2}));
  CHECK_THROWS_AS(ps.add("a.w", Tensor({1})), ContractError);
  CHECK_THROWS_AS(ps.add("", Tensor({1})), ContractError);
  CHECK_THROWS_AS(ps.get("missing"), NotFoundError);
  for (const auto& [n, p] : ps) CHECK(p.grad.shape() == p.value.shape());
}

TEST_CASE("gradcheck examples") {
  std::mt19937_64 rng(17);
  Tensor x = random_tensor({10}, rng);
  auto rep = gradcheck([](Tape&, const Var& v) { return sum(v); }, x, 1e-3, 1e-2);
  CHECK(rep.pass);
  CHECK(rep.max_rel_err < 1e-3);

  // no exact zeros: plain pass
  for (auto& v : x.data())
    if (std::abs(v) < 0.05) v = 0.5;
  rep = gradcheck([](Tape&, const Var& v) { return sum(relu(v)); }, x, 1e-3, 1e-2);
  CHECK(rep.pass);
  CHECK(rep.excluded == 0);

  // an exact zero sits on the kink and is excluded
  x[3] = 0;
  rep = gradcheck([](Tape&, const Var& v) { return sum(relu(v)); }, x, 1e-3, 1e-2);
  CHECK(rep.pass);
  CHECK(rep.excluded == 1);
}

TEST_CASE("gradcheck catches a wrong gradient") {
  // Registers d/dx = 1 for x^2.
  auto broken = [](Tape& t, const Var& v) {
    Tensor sq = v.value();
    for (auto& e : sq.data()) e = e * e;
    const int iv = v.id();
    Var y = t.record(std::move(sq), {v}, [iv](Tape& tt, const Tensor& g) {
      for (std::size_t i = 0; i < g.size(); ++i) tt.grad(iv)[i] += g[i];
    });
    return sum(y);
  };
  Tensor x({4}, {0.7, -1.2, 2.0, 1.5});
  CHECK_FALSE(gradcheck(broken, x, 1e-3, 1e-2).pass);
}

TEST_CASE("gradcheck flags non-determinism") {
  int calls = 0;
  auto flaky = [&](Tape&, const Var& v) { return add_scalar(sum(v), real(++calls)); };
  auto rep = gradcheck(flaky, Tensor({3}, 1), 1e-3, 1e-2);
  CHECK_FALSE(rep.valid);
  CHECK_FALSE(rep.pass);
}

TEST_CASE("chain rule: composites of the op set pass gradcheck") { rdte::testing::check_gradcheck_scope("tensor"); }

TEST_CASE("gradcheck catches a slightly wrong gradient in a noisy composite") {
  // d/dx tanh(x)^2 reported 3% too large
  auto off = [](Tape& t, const Var& v) {
    Var th = tanh(v);
    Tensor y = th.value();
    for (auto& e : y.data()) e = e * e;
    const int it = th.id();
    const Tensor tv = th.value();
    return t.record(std::move(y), {th}, [it, tv](Tape& tt, const Tensor& g) {
      for (std::size_t i = 0; i < g.size(); ++i) tt.grad(it)[i] += real(1.03 * 2 * tv[i] * g[i]);
    });
  };
  std::mt19937_64 rng(3);
  Tensor x = random_tensor({12}, rng, 0.3, 1.5);
  auto rep = gradcheck(off, x, 1e-2, 1e-2);
  CHECK(rep.valid);
  CHECK_FALSE(rep.pass);
  CHECK(rep.max_rel_err > 0.02);
}

TEST_CASE("an unreachable tolerance fails rather than excluding everything") {
  // Far below what a central difference can resolve at this precision; the
  // double build resolves linear ops like stair_pad to about 1e-13.
  const double unreachable = sizeof(real) == 4 ? 1e-12 : 1e-16;
  std::mt19937_64 rng(8);
  Tensor x = random_tensor({6}, rng);
  auto rep = gradcheck([](Tape&, const Var& v) { return sin(v); }, x, 1e-2, unreachable);
  CHECK_FALSE(rep.pass);
  for (const auto& c : gradcheck_cases("stair")) CHECK_FALSE(c.run(unreachable, c.eps).pass);
}

TEST_CASE("suite scopes") {
  CHECK(gradcheck_scopes().size() == 7);
  CHECK(gradcheck_cases("all").size() > gradcheck_cases("nn").size());
  CHECK_THROWS_AS(gradcheck_cases("optics"), ConfigError);
  for (const auto& c : gradcheck_cases("model")) CHECK(c.tol == (c.name == "model subset" ? 2e-2 : 1e-2));
}

TEST_CASE("RDTF layout is bit-exact") {
  Tensor t({1, 2}, {1.0, -2.5});
  std::ostringstream os;
  write_rdtf(os, t);
  const std::string s = os.str();
  const unsigned char expected[] = {'R', 'D', 'T', 'F', 1, 0, 2, 0,
                                    1, 0, 0, 0, 2, 0, 0, 0,
                                    0x00, 0x00, 0x80, 0x3f,   // 1.0f
                                    0x00, 0x00, 0x20, 0xc0};  // -2.5f
  REQUIRE(s.size() == sizeof(expected));
  for (std::size_t i = 0; i < s.size(); ++i) CHECK((unsigned char)s[i] == expected[i]);
}

TEST_CASE("RDTF round trip and errors") {
  std::mt19937_64 rng(9);
  Tensor t = random_tensor({2, 3, 4, 1}, rng, -100, 100);
  for (auto& v : t.data()) v = real(float(v));  // the file stores f32
  std::stringstream ss;
  write_rdtf(ss, t);
  CHECK(bit_equal(read_rdtf(ss), t));

  std::string bytes;
  {
    std::ostringstream os;
    write_rdtf(os, t);
    bytes = os.str();
  }
  std::istringstream trunc(bytes.substr(0, bytes.size() - 3));
  CHECK_THROWS_AS(read_rdtf(trunc), TruncationError);
  std::string bad = bytes;
  bad[0] = 'X';
  std::istringstream bad_magic(bad);
  CHECK_THROWS_AS(read_rdtf(bad_magic), FormatError);
  bad = bytes;
  bad[4] = 2;
  std::istringstream bad_version(bad);
  CHECK_THROWS_AS(read_rdtf(bad_version), FormatError);
}
