// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "doctest.h"
#include "rdte/errors.hpp"
#include "rdte/model.hpp"
#include "test_util.hpp"

using namespace rdte;
using rdte::testing::all_close;
using rdte::testing::random_tensor;

namespace {

ModelConfig small_config(Variant v = Variant::full) {
  ModelConfig c;
  c.height = c.width = 32;
  c.base_width = 2;
  c.variant = v;
  c.seed = 3;
  return c;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("rdte_test_" + name);
}

std::string read_all(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

void write_all(const std::filesystem::path& p, const std::string& s) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  f.write(s.data(), std::streamsize(s.size()));
}

}  // namespace

TEST_CASE("model config validation and json") {
  ModelConfig c;
  CHECK_NOTHROW(c.validate());
  c.height = 60;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = ModelConfig{};
  c.num_classes = 1;
  CHECK_THROWS_AS(c.validate(), ConfigError);

  c = small_config(Variant::no_hvda);
  ModelConfig back = ModelConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());

  auto j = c.to_json();
  j["colour"] = 1;
  CHECK_THROWS_AS(ModelConfig::from_json(j), ConfigError);
  j = c.to_json();
  j.erase("height");
  CHECK_THROWS_AS(ModelConfig::from_json(j), ConfigError);
  j = c.to_json();
  j["variant"] = "no_skip";
  CHECK_THROWS_AS(ModelConfig::from_json(j), ConfigError);
  j = c.to_json();
  j["width"] = -32;
  CHECK_THROWS_AS(ModelConfig::from_json(j), ConfigError);
}

TEST_CASE("stage ladder for every variant at 64x64, base 16") {
  for (Variant v : {Variant::full, Variant::no_asbe, Variant::no_hvda, Variant::no_eulerff}) {
    ModelConfig c;
    c.variant = v;
    Model m(c);
    Tape tape(false);
    Context ctx{tape, m.params(), Mode::eval};
    ForwardTrace tr;
    Tensor y = m.forward(ctx, tape.constant(Tensor({1, 64, 64, 1}, 0.5f)), &tr).value();
    INFO(variant_name(v));
    CHECK(tr.stem == Shape{1, 64, 64, 16});
    const std::vector<Shape> enc{{1, 32, 32, 32}, {1, 16, 16, 64}, {1, 8, 8, 128}, {1, 4, 4, 256}, {1, 2, 2, 512}};
    const std::vector<Shape> dec{{1, 4, 4, 256}, {1, 8, 8, 128}, {1, 16, 16, 64}, {1, 32, 32, 32}, {1, 64, 64, 16}};
    CHECK(tr.encoder == enc);
    CHECK(tr.decoder == dec);
    CHECK(y.shape() == Shape{1, 64, 64, 4});
    CHECK(y.all_finite());
  }
}

TEST_CASE("removing EulerFF removes parameters") {
  ModelConfig c = small_config();
  const std::size_t full = Model(c).parameter_count();
  c.variant = Variant::no_eulerff;
  CHECK(Model(c).parameter_count() < full);
}

TEST_CASE("wrong input shape names expected and got") {
  Model m(small_config());
  try {
    m.predict(Tensor({1, 32, 64, 1}));
    FAIL("no error");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("32,32,1") != std::string::npos);
    CHECK(std::string(e.what()).find("[1,32,64,1]") != std::string::npos);
  }
}

TEST_CASE("eval forward is deterministic and batch consistent") {
  std::mt19937_64 rng(4);
  Model m(small_config());
  Tensor x = random_tensor({3, 32, 32, 1}, rng, 0, 1);
  Tensor a = m.predict(x), b = m.predict(x);
  CHECK(bit_equal(a, b));
  const std::size_t per = 32 * 32;
  double worst = 0;
  for (std::size_t s = 0; s < 3; ++s) {
    Tensor xi({1, 32, 32, 1}, std::vector<real>(x.data().begin() + long(s * per), x.data().begin() + long((s + 1) * per)));
    Tensor yi = m.predict(xi);
    for (std::size_t i = 0; i < yi.size(); ++i) worst = std::max(worst, std::abs(double(yi[i]) - a[s * yi.size() + i]));
  }
  CHECK(worst <= 1e-5);
}

TEST_CASE("loss examples") {
  Tape tape;
  Tensor labels({1, 2, 2}, {0, 1, 2, 1});
  Tensor sure({1, 2, 2, 3}, -20);
  for (std::size_t m = 0; m < 4; ++m) sure[m * 3 + std::size_t(labels[m])] = 20;
  LossParts good = segmentation_loss(tape.constant(sure), labels);
  CHECK(good.total.value()[0] < 1e-3);
  CHECK(good.total.value()[0] >= 0);

  LossParts flat = segmentation_loss(tape.constant(Tensor({2, 3, 3, 2})), Tensor({2, 3, 3}, 1));
  CHECK(std::abs(flat.ce - std::log(2.0)) < 1e-6);
  // p = 1/2 everywhere, all 18 pixels foreground: D = (2*9 + 1) / (9 + 18 + 1)
  CHECK(std::abs(flat.dice - (1 - 19.0 / 28.0)) < 1e-6);
  CHECK(std::abs(flat.total.value()[0] - 0.5 * (flat.ce + flat.dice)) < 1e-6);

  CHECK_THROWS_AS(segmentation_loss(tape.constant(Tensor({1, 2, 2, 3})), Tensor({1, 2, 2}, 3)), ContractError);
  CHECK_THROWS_AS(segmentation_loss(tape.constant(Tensor({1, 2, 2, 3})), Tensor({1, 2, 2}, -1)), ContractError);
  CHECK_THROWS_AS(segmentation_loss(tape.constant(Tensor({1, 2, 2, 3})), Tensor({1, 2, 3})), ShapeError);
}

TEST_CASE("adam") {
  ParamStore ps;
  ps.add("w", Tensor({2}, {3, -2}));
  Adam opt;
  opt.lr = 0.1;
  for (int it = 0; it < 500; ++it) {
    Tape tape;
    Var w = tape.param(ps, "w");
    backward(tape, sum(mul(w, w)), ps);
    if (it == 0) {
      opt.step(ps);
      // the first bias-corrected step moves each entry by lr against the gradient sign
      CHECK(std::abs(ps.get("w").value[0] - 2.9) < 1e-6);
      CHECK(std::abs(ps.get("w").value[1] + 1.9) < 1e-6);
      continue;
    }
    opt.step(ps);
  }
  CHECK(std::abs(ps.get("w").value[0]) < 1e-2);
  CHECK(std::abs(ps.get("w").value[1]) < 1e-2);
}

TEST_CASE("checkpoint round trip and errors") {
  std::mt19937_64 rng(5);
  Model m(small_config(Variant::no_asbe));
  // make running statistics non-default so they are covered too
  {
    Tape tape(false);
    Context ctx{tape, m.params(), Mode::train};
    m.forward(ctx, tape.constant(random_tensor({2, 32, 32, 1}, rng, 0, 1)));
  }
  // checkpoints hold float32, so a double build only round-trips stored values
  for (auto& [name, p] : m.params()) p.value = rdte::testing::stored(p.value);
  const auto path = temp_path("ckpt.rdtc");
  save_checkpoint(path, m, 42);
  LoadedCheckpoint back = load_checkpoint(path);
  CHECK(back.step == 42);
  CHECK(back.model.config().to_json() == m.config().to_json());
  for (const auto& [name, p] : m.params()) CHECK(bit_equal(back.model.params().get(name).value, p.value));
  Tensor x = random_tensor({1, 32, 32, 1}, rng, 0, 1);
  CHECK(bit_equal(back.model.predict(x), m.predict(x)));

  const std::string bytes = read_all(path);
  const auto bad = temp_path("bad.rdtc");

  write_all(bad, bytes.substr(0, bytes.size() / 2));
  CHECK_THROWS_AS(load_checkpoint(bad), TruncationError);

  std::string wrong = bytes;
  wrong[0] = 'X';
  write_all(bad, wrong);
  CHECK_THROWS_AS(load_checkpoint(bad), FormatError);
  try {
    load_checkpoint(bad);
  } catch (const TruncationError&) {
    FAIL("bad magic reported as truncation");
  } catch (const FormatError&) {
  }

  wrong = bytes;
  wrong[4] = 2;
  write_all(bad, wrong);
  CHECK_THROWS_AS(load_checkpoint(bad), FormatError);

  wrong = bytes;
  const auto at = wrong.rfind("\"base_width\":2");
  REQUIRE(at != std::string::npos);
  wrong[at + 13] = '4';
  write_all(bad, wrong);
  CHECK_THROWS_AS(load_checkpoint(bad), ShapeError);

  CHECK_THROWS_AS(load_checkpoint(temp_path("missing.rdtc")), NotFoundError);
  std::filesystem::remove(path);
  std::filesystem::remove(bad);
}

TEST_CASE("finite-difference gradient checks") { rdte::testing::check_gradcheck_scope("model"); }
