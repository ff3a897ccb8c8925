// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "rdte/errors.hpp"
#include "rdte/metrics.hpp"
#include "rdte/model.hpp"

using namespace rdte;

namespace {

Mask random_mask(std::mt19937_64& rng, std::size_t n) {
  // density varies per mask so that sparse, dense and empty masks all occur
  std::uniform_real_distribution<double> u(0, 1);
  const double density = u(rng) < 0.05 ? 0.0 : u(rng);
  Mask m(n, n);
  for (auto& b : m.bits) b = u(rng) < density;
  return m;
}

Mask block(std::size_t n, std::size_t y0, std::size_t x0, std::size_t h, std::size_t w) {
  Mask m(n, n);
  for (std::size_t y = y0; y < y0 + h; ++y)
    for (std::size_t x = x0; x < x0 + w; ++x) m.bits[y * n + x] = 1;
  return m;
}

// Brute-force oracles, written independently of the library.

double oracle_dsc(const Mask& p, const Mask& g) {
  double inter = 0, sp = 0, sg = 0;
  for (std::size_t y = 0; y < p.height; ++y)
    for (std::size_t x = 0; x < p.width; ++x) {
      inter += p.at(y, x) && g.at(y, x);
      sp += p.at(y, x);
      sg += g.at(y, x);
    }
  return sp + sg == 0 ? 1.0 : 2 * inter / (sp + sg);
}

std::vector<std::pair<int, int>> oracle_boundary(const Mask& m) {
  const int h = int(m.height), w = int(m.width);
  auto inside = [&](int y, int x) { return y >= 0 && x >= 0 && y < h && x < w && m.at(std::size_t(y), std::size_t(x)); };
  std::vector<std::pair<int, int>> out;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (inside(y, x) && (!inside(y - 1, x) || !inside(y + 1, x) || !inside(y, x - 1) || !inside(y, x + 1)))
        out.emplace_back(y, x);
  return out;
}

// All directed boundary distances, both ways.
std::vector<double> pooled_distances(const Mask& p, const Mask& g) {
  const auto bp = oracle_boundary(p), bg = oracle_boundary(g);
  std::vector<double> pooled;
  auto directed = [&](const auto& from, const auto& to) {
    for (auto [ay, ax] : from) {
      double best = INFINITY;
      for (auto [by, bx] : to) best = std::min(best, std::sqrt(double((ay - by) * (ay - by) + (ax - bx) * (ax - bx))));
      pooled.push_back(best);
    }
  };
  directed(bp, bg);
  directed(bg, bp);
  return pooled;
}

double oracle_hd95(const Mask& p, const Mask& g) {
  const bool pe = p.count() == 0, ge = g.count() == 0;
  if (pe && ge) return 0;
  if (pe || ge) return std::sqrt(double(p.height * p.height + p.width * p.width));
  auto pooled = pooled_distances(p, g);
  std::sort(pooled.begin(), pooled.end());
  const auto rank = std::size_t(std::ceil(0.95 * double(pooled.size())));
  return pooled[rank - 1];
}

}  // namespace

TEST_CASE("dsc hand values") {
  const Mask a = block(4, 1, 0, 2, 2);
  CHECK(dsc(a, a) == 1.0);
  CHECK(dsc(a, block(4, 1, 1, 2, 2)) == 0.5);
  CHECK(dsc(a, block(4, 1, 2, 2, 2)) == 0.0);
  CHECK(dsc(Mask(4, 4), Mask(4, 4)) == 1.0);
  CHECK_THROWS_AS(dsc(Mask(4, 4), Mask(4, 5)), ShapeError);
}

TEST_CASE("hd95 hand values") {
  Mask p(8, 8), g(8, 8);
  p.bits[2 * 8 + 1] = 1;
  g.bits[2 * 8 + 4] = 1;
  CHECK(hd95(p, g).value == 3.0);
  CHECK_FALSE(hd95(p, g).sentinel);
  CHECK(hd95(p, p).value == 0.0);

  const Hd95 one_empty = hd95(p, Mask(8, 8));
  CHECK(one_empty.sentinel);
  CHECK(one_empty.value == std::hypot(8.0, 8.0));
  const Hd95 both_empty = hd95(Mask(8, 8), Mask(8, 8));
  CHECK(both_empty.value == 0.0);
  CHECK_FALSE(both_empty.sentinel);
  CHECK_THROWS_AS(hd95(Mask(4, 4), Mask(5, 4)), ShapeError);
}

TEST_CASE("boundary counts the image border as outside") {
  Mask full(3, 3);
  std::fill(full.bits.begin(), full.bits.end(), 1);
  CHECK(boundary(full).size() == 8);  // all but the centre
  Mask big(5, 5);
  std::fill(big.bits.begin(), big.bits.end(), 1);
  CHECK(boundary(big).size() == 16);
}

TEST_CASE("dsc and hd95 equal brute-force oracles on 200 random 16x16 pairs") {
  std::mt19937_64 rng(2024);
  int sentinels = 0;
  for (int t = 0; t < 200; ++t) {
    const Mask p = random_mask(rng, 16), g = random_mask(rng, 16);
    INFO("pair " << t);
    CHECK(dsc(p, g) == oracle_dsc(p, g));
    CHECK(hd95(p, g).value == oracle_hd95(p, g));
    sentinels += hd95(p, g).sentinel;
  }
  CHECK(sentinels > 0);  // the empty-mask branch was exercised
}

TEST_CASE("symmetry and hd95 below the Hausdorff distance") {
  std::mt19937_64 rng(11);
  for (int t = 0; t < 200; ++t) {
    const Mask p = random_mask(rng, 12), g = random_mask(rng, 12);
    CHECK(dsc(p, g) == dsc(g, p));
    CHECK(hd95(p, g).value == hd95(g, p).value);
    if (p.count() > 0 && g.count() > 0) {
      const auto pooled = pooled_distances(p, g);
      CHECK(hd95(p, g).value <= *std::max_element(pooled.begin(), pooled.end()));
    }
  }
}

TEST_CASE("distance transform is exact on larger masks") {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 10; ++t) {
    const Mask p = random_mask(rng, 40), g = random_mask(rng, 40);
    CHECK(hd95(p, g).value == oracle_hd95(p, g));
  }
}

namespace {

Tensor labels_from(std::size_t n, std::vector<std::pair<std::size_t, std::size_t>> cls_at) {
  Tensor t({n, n});
  for (auto [i, c] : cls_at) t[i] = real(c);
  return t;
}

}  // namespace

TEST_CASE("evaluate_labels: oracle and constant predictors") {
  std::vector<Tensor> gts{labels_from(8, {{9, 1}, {10, 1}, {30, 2}}), labels_from(8, {{40, 1}, {41, 3}})};
  EvalReport perfect = evaluate_labels(gts, gts, 4);
  CHECK(perfect.mean_dsc == 1.0);
  CHECK(perfect.mean_hd95 == 0.0);
  CHECK(perfect.samples == 2);
  REQUIRE(perfect.per_class.size() == 3);
  CHECK(perfect.per_class[0].samples == 2);
  CHECK(perfect.per_class[1].samples == 1);  // absent-class samples are skipped

  std::vector<Tensor> background{Tensor({8, 8}), Tensor({8, 8})};
  EvalReport bad = evaluate_labels(background, gts, 4);
  for (const auto& c : bad.per_class) {
    CHECK(*c.dsc == 0.0);
    CHECK(c.hd95_sentinel_count == c.samples);
    CHECK(*c.hd95 == std::hypot(8.0, 8.0));
  }

  // a class never present in gt stays undefined and out of the means
  EvalReport five = evaluate_labels(gts, gts, 5);
  CHECK_FALSE(five.per_class[3].dsc.has_value());
  CHECK(five.mean_dsc == 1.0);
}

TEST_CASE("report json round trip") {
  std::vector<Tensor> gts{labels_from(8, {{9, 1}, {10, 2}})};
  std::vector<Tensor> preds{labels_from(8, {{9, 1}, {11, 2}})};
  EvalReport r = evaluate_labels(preds, gts, 4);
  r.variant = "no_hvda";
  const auto j = r.to_json();
  CHECK(j.at("per_class").at(0).contains("hd95_sentinel_count"));
  CHECK(j.at("per_class").at(2).at("dsc").is_null());
  EvalReport back = EvalReport::from_json(nlohmann::json::parse(j.dump()));
  CHECK(back.to_json() == j);
  CHECK(*back.variant == "no_hvda");
  CHECK_THROWS_AS(EvalReport::from_json(nlohmann::json{{"samples", 1}}), FormatError);
}

TEST_CASE("argmax ties go to the lower class") {
  Tensor logits({1, 1, 2, 3}, {0, 2, 2, 5, 1, 0});
  auto labels = argmax_labels(logits);
  REQUIRE(labels.size() == 1);
  CHECK(labels[0][0] == 1);
  CHECK(labels[0][1] == 0);
}

TEST_CASE("evaluate runs a model end to end") {
  ModelConfig c;
  c.height = c.width = 32;
  c.base_width = 2;
  Model m(c);
  GenSpec spec;
  spec.count = 3;
  spec.size = 32;
  const auto samples = generate(spec);
  EvalReport r = evaluate(m, samples, 2);
  CHECK(r.samples == 3);
  CHECK(r.per_class.size() == 3);
  CHECK(r.mean_dsc >= 0.0);
  CHECK(r.mean_dsc <= 1.0);
  CHECK(EvalReport::from_json(nlohmann::json::parse(r.to_json().dump())).samples == 3);
}
