// SPDX-License-Identifier: Apache-2.0
// Acceptance run: one PASS/FAIL line per criterion. Exit 0 iff all pass.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "rdte/cli.hpp"
#include "rdte/eulerff.hpp"
#include "rdte/gradcheck_suite.hpp"
#include "rdte/hvda.hpp"
#include "rdte/metrics.hpp"
#include "rdte/model.hpp"
#include "rdte/stairconv.hpp"
#include "rdte/train.hpp"

using namespace rdte;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Tensor random_tensor(const Shape& shape, std::mt19937_64& rng, double lo = -1, double hi = 1) {
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor t(shape);
  for (auto& v : t.data()) v = real(d(rng));
  return t;
}

Tensor flip(const Tensor& t, std::size_t axis) {
  Tensor out(t.shape());
  for (std::size_t i = 0; i < t.size(); ++i) {
    auto c = t.coords(i);
    c[axis] = t.dim(axis) - 1 - c[axis];
    out[t.offset(c)] = t[i];
  }
  return out;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

int cli(std::vector<std::string> args, std::string* err = nullptr) {
  args.insert(args.begin(), "rdte");
  std::ostringstream o, e;
  const int code = run_cli(args, o, e);
  if (err) *err = e.str();
  return code;
}

fs::path write_config(const fs::path& path, const fs::path& data, const fs::path& out, std::size_t size,
                      std::size_t steps) {
  const nlohmann::json j{{"model",
                          {{"height", size}, {"width", size}, {"in_channels", 1}, {"num_classes", 4}, {"base_width", 2},
                           {"variant", "full"}, {"seed", 0}}},
                         {"train", {{"steps", steps}, {"batch", 4}, {"lr", 1e-3}, {"seed", 0}}},
                         {"data", {{"dir", data.string()}}},
                         {"out", out.string()}};
  std::ofstream(path) << j.dump(2);
  return path;
}

// ---------------------------------------------------------------------------

Verdict gradient_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  std::size_t failed = 0, n = 0;
  std::string worst;
  for (const auto& c : gradcheck_cases("all", 0)) {
    const double limit = c.scope == "model" ? 2e-2 : 1e-2;
    const GradcheckReport r = c.run(std::min(c.tol, limit), c.eps);
    ++n;
    if (!r.pass) {
      ++failed;
      worst += " " + c.name + "(" + fmt("%.3g", r.max_rel_err) + ")";
    }
  }
  const double s = seconds_since(t0);
  return {failed == 0 && s < 300,
          std::to_string(n - failed) + "/" + std::to_string(n) + " cases in " + fmt("%.1f", s) + "s" +
              (failed ? "; failed:" + worst : "")};
}

Verdict shape_ladder() {
  bool ok = true;
  for (Variant v : {Variant::full, Variant::no_asbe, Variant::no_hvda, Variant::no_eulerff}) {
    ModelConfig c;
    c.variant = v;
    Model m(c);
    Tape tape(false);
    Context ctx{tape, m.params(), Mode::eval};
    ForwardTrace tr;
    const Tensor y = m.forward(ctx, tape.constant(Tensor({1, 64, 64, 1}, 0.5f)), &tr).value();
    ok = ok && tr.encoder.size() == 5 && tr.decoder.size() == 5;
    if (!ok) break;
    const std::vector<Shape> enc{{1, 32, 32, 32}, {1, 16, 16, 64}, {1, 8, 8, 128}, {1, 4, 4, 256}};
    for (std::size_t i = 0; i < enc.size(); ++i) ok = ok && tr.encoder[i] == enc[i];
    ok = ok && tr.decoder.back() == Shape{1, 64, 64, 16} && y.shape() == Shape{1, 64, 64, 4};
  }
  return {ok, "4 variants, encoder 32^2x32 .. 4^2x256, decoder back to 64^2"};
}

Verdict stair_contract() {
  std::mt19937_64 rng(3);
  std::size_t shapes = 0, bad = 0;
  double worst = 0;
  for (StairAxis axis : {StairAxis::horizontal, StairAxis::vertical})
    for (std::size_t k = 1; k <= 3; ++k) {
      StairConv sc{"s", axis, k, 2, 3};
      ParamStore ps;
      Rng r(k);
      sc.init(ps, r);
      for (std::size_t h = 2; h <= 9; ++h)
        for (std::size_t w = 2; w <= 9; ++w) {
          Tape tape(false);
          Context ctx{tape, ps, Mode::train};
          ++shapes;
          bad += sc(ctx, tape.constant(random_tensor({1, h, w, 2}, rng))).value().shape() != Shape{1, h, w, 3};
        }

      // Mirror the input along the stair axis and swap each level's two
      // branch kernels (mirrored): the branch features come out mirrored,
      // with the two sides' blocks exchanged.
      const std::size_t img_axis = axis == StairAxis::horizontal ? 2 : 1;
      StairConv wide{"m", axis, k, 3, 8};
      ParamStore a, b;
      Rng ra(10 + k), rb(0);
      wide.init(a, ra);
      wide.init(b, rb);
      for (int level : {1, 2}) {
        const std::string first = wide.branch_name(level, StairSide::first);
        const std::string second = wide.branch_name(level, StairSide::second);
        b.get(first + ".conv.w").value = flip(a.get(second + ".conv.w").value, img_axis - 1);
        b.get(second + ".conv.w").value = flip(a.get(first + ".conv.w").value, img_axis - 1);
      }
      const Tensor x = random_tensor({2, 5, 7, 3}, rng);
      auto features = [&](ParamStore& ps, const Tensor& in) {
        Tape tape(false);
        Context ctx{tape, ps, Mode::train};
        return wide.features(ctx, tape.constant(in)).value();
      };
      const Tensor f = features(a, x), g = features(b, flip(x, img_axis));
      const std::size_t cb = wide.c_branch();
      for (std::size_t i = 0; i < f.size(); ++i) {
        auto c = f.coords(i), m = c;
        m[img_axis] = f.dim(img_axis) - 1 - c[img_axis];
        m[3] = ((c[3] / cb) ^ 1) * cb + c[3] % cb;
        worst = std::max(worst, std::abs(double(f[i]) - g[g.offset(m)]));
      }
    }
  return {bad == 0 && worst <= 1e-5, std::to_string(shapes - bad) + "/" + std::to_string(shapes) +
                                         " shapes preserved; mirror error " + fmt("%.2e", worst) + " (tol 1e-5)"};
}

Verdict attention() {
  std::mt19937_64 rng(3);
  double rows = 0;
  for (int trial = 0; trial < 100; ++trial) {
    Hvda att{"a", 2};
    ParamStore ps;
    Rng r(trial);
    att.init(ps, r);
    Tape tape(false);
    Context ctx{tape, ps, Mode::train};
    std::vector<Tensor> maps;
    att.forward(ctx, tape.constant(random_tensor({2, 4, 4, 2}, rng, -3, 3)), &maps);
    for (const Tensor& m : maps) {
      const std::size_t n = m.dim(0);
      for (std::size_t i = 0; i < n; ++i) {
        double s = 0;
        for (std::size_t j = 0; j < n; ++j) s += m[i * n + j];
        rows = std::max(rows, std::abs(s - 1));
      }
    }
  }

  // Zero query and key projections make every row uniform: the output is
  // the spatial mean of V, plus the residual input.
  Hvda att{"a", 3};
  ParamStore ps;
  Rng r(5);
  att.init(ps, r);
  for (const char* n : {"a.proj_q.w", "a.proj_q.b", "a.proj_k.w"})
    for (auto& v : ps.get(n).value.data()) v = 0;
  const Tensor x = random_tensor({2, 3, 5, 3}, rng);
  Tape tape(false);
  Context ctx{tape, ps, Mode::train};
  const Tensor y = att(ctx, tape.constant(x)).value();
  const Tensor v = att.proj_v()(ctx, att.branch(2)(ctx, tape.constant(x))).value();
  const std::size_t hw = 15;
  double mean_err = 0;
  for (std::size_t s = 0; s < 2; ++s)
    for (std::size_t c = 0; c < 3; ++c) {
      double m = 0;
      for (std::size_t p = 0; p < hw; ++p) m += v[(s * hw + p) * 3 + c];
      m /= double(hw);
      for (std::size_t p = 0; p < hw; ++p) {
        const std::size_t i = (s * hw + p) * 3 + c;
        mean_err = std::max(mean_err, std::abs(double(y[i]) - (m + x[i])));
      }
    }
  return {rows <= 1e-5 && mean_err <= 1e-5,
          "row-sum error " + fmt("%.2e", rows) + ", uniform-limit error " + fmt("%.2e", mean_err) + " (tol 1e-5)"};
}

Verdict euler_identity() {
  std::mt19937_64 rng(1);
  double worst = 0;
  bool phase_ok = true, amp_ok = true;
  for (int trial = 0; trial < 100; ++trial) {
    EulerStream s{"e", 3};
    ParamStore ps;
    Rng r(trial);
    s.init(ps, r);
    const double mag = trial < 50 ? 1.0 : 1e3;
    const Tensor x = random_tensor({1, 4, 5, 3}, rng, -mag, mag);
    for (EulerAxis axis : {EulerAxis::horizontal, EulerAxis::vertical}) {
      Tape tape(false);
      Context ctx{tape, ps, Mode::train};
      const EulerParts p = s.expand(ctx, tape.constant(x), axis);
      const Tensor &a = p.amplitude.value(), &th = p.phase.value(), &f = p.expanded.value();
      const std::size_t c = 3;
      for (std::size_t pos = 0; pos < 20; ++pos)
        for (std::size_t ch = 0; ch < c; ++ch) {
          const double av = a[pos * c + ch], t = th[pos * c + ch];
          const double re = f[pos * 2 * c + ch], im = f[pos * 2 * c + c + ch];
          amp_ok = amp_ok && av >= 0;
          phase_ok = phase_ok && t > -std::numbers::pi && t < std::numbers::pi;
          worst = std::max(worst, std::abs(re * re + im * im - av * av) / std::max(1.0, av * av));
        }
    }
  }
  return {worst <= 1e-4 && phase_ok && amp_ok,
          "identity error " + fmt("%.2e", worst) + " (tol 1e-4), phase in (-pi, pi): " + (phase_ok ? "yes" : "no")};
}

// Brute-force metric oracles, independent of the library's distance transform.
double oracle_dsc(const Mask& p, const Mask& g) {
  double inter = 0, sp = 0, sg = 0;
  for (std::size_t i = 0; i < p.bits.size(); ++i) {
    inter += p.bits[i] && g.bits[i];
    sp += p.bits[i] != 0;
    sg += g.bits[i] != 0;
  }
  return sp + sg == 0 ? 1.0 : 2 * inter / (sp + sg);
}

double oracle_hd95(const Mask& p, const Mask& g) {
  const bool pe = p.count() == 0, ge = g.count() == 0;
  if (pe && ge) return 0;
  if (pe || ge) return std::hypot(double(p.height), double(p.width));
  auto edge = [](const Mask& m) {
    const int h = int(m.height), w = int(m.width);
    auto in = [&](int y, int x) { return y >= 0 && x >= 0 && y < h && x < w && m.at(std::size_t(y), std::size_t(x)); };
    std::vector<std::pair<int, int>> out;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        if (in(y, x) && (!in(y - 1, x) || !in(y + 1, x) || !in(y, x - 1) || !in(y, x + 1))) out.emplace_back(y, x);
    return out;
  };
  const auto bp = edge(p), bg = edge(g);
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
  std::sort(pooled.begin(), pooled.end());
  return pooled[std::size_t(std::ceil(0.95 * double(pooled.size()))) - 1];
}

Verdict metrics_oracle() {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(0, 1);
  std::size_t mismatches = 0;
  for (int t = 0; t < 200; ++t) {
    Mask p(16, 16), g(16, 16);
    for (Mask* m : {&p, &g}) {
      const double density = u(rng) < 0.05 ? 0.0 : u(rng);
      for (auto& b : m->bits) b = u(rng) < density;
    }
    mismatches += dsc(p, g) != oracle_dsc(p, g) || hd95(p, g).value != oracle_hd95(p, g);
  }
  Mask a(4, 4), b(4, 4);
  for (std::size_t y = 1; y < 3; ++y)
    for (std::size_t x = 0; x < 2; ++x) a.bits[y * 4 + x] = b.bits[y * 4 + x + 1] = 1;
  Mask p(8, 8), q(8, 8);
  p.bits[2 * 8 + 1] = q.bits[2 * 8 + 4] = 1;
  const double d = dsc(a, b), h = hd95(p, q).value;
  return {mismatches == 0 && d == 0.5 && h == 3.0, std::to_string(200 - mismatches) +
                                                       "/200 pairs exact; shifted-block DSC " + fmt("%g", d) +
                                                       ", point-pair HD95 " + fmt("%g", h)};
}

Verdict overfit(const fs::path& work) {
  const fs::path data = work / "overfit_data", out = work / "overfit_run";
  if (cli({"gen", "--out", data.string(), "--count", "8", "--size", "64", "--seed", "7"}) != 0) return {false, "gen failed"};
  const auto cfg = write_config(work / "overfit.json", data, out, 64, 2000);
  const auto t0 = std::chrono::steady_clock::now();
  std::string err;
  if (cli({"train", "--config", cfg.string()}, &err) != 0) return {false, "train failed: " + err};
  const double s = seconds_since(t0);
  if (cli({"eval", "--ckpt", checkpoint_file(out).string(), "--data", data.string(), "--report",
           (out / "report.json").string()},
          &err) != 0)
    return {false, "eval failed: " + err};
  const auto r = EvalReport::from_json(nlohmann::json::parse(slurp(out / "report.json")));
  LoadedCheckpoint ck = load_checkpoint(checkpoint_file(out));
  return {r.mean_dsc >= 0.95 && s <= 1800,
          "mean foreground DSC " + fmt("%.4f", r.mean_dsc) + " (>= 0.95) after 2000 steps, " +
              std::to_string(ck.model.parameter_count()) + " params, " + fmt("%.0f", s) + "s (<= 1800s)"};
}

Verdict ablation(const fs::path& work) {
  const fs::path data = work / "ablate_data";
  if (cli({"gen", "--out", data.string(), "--count", "8", "--size", "32", "--seed", "7"}) != 0) return {false, "gen failed"};
  const auto cfg = write_config(work / "ablate.json", data, work / "ablate", 32, 20);
  std::vector<std::string> keys;
  bool ok = true;
  std::string detail;
  for (const char* v : {"full", "no_asbe", "no_hvda", "no_eulerff"}) {
    std::string err;
    if (cli({"ablate", "--variant", v, "--config", cfg.string()}, &err) != 0) return {false, std::string(v) + ": " + err};
    const auto j = nlohmann::json::parse(slurp(work / "ablate" / v / "report.json"));
    const auto r = EvalReport::from_json(j);
    std::vector<std::string> k;
    for (const auto& [key, _] : j.items()) k.push_back(key);
    if (keys.empty()) keys = k;
    ok = ok && r.variant == v && k == keys && r.samples == 8 && r.per_class.size() == 3;
    detail += std::string(detail.empty() ? "" : ", ") + v + " " + fmt("%.3f", r.mean_dsc);
  }
  return {ok, "reports with one schema: " + detail};
}

Verdict determinism(const fs::path& work) {
  const fs::path data = work / "ablate_data";
  const auto a = write_config(work / "det_a.json", data, work / "det_a", 32, 30);
  const auto b = write_config(work / "det_b.json", data, work / "det_b", 32, 30);
  if (cli({"train", "--config", a.string()}) != 0 || cli({"train", "--config", b.string()}) != 0)
    return {false, "train failed"};
  const bool csv = slurp(loss_log_file(work / "det_a")) == slurp(loss_log_file(work / "det_b"));
  const bool ck = slurp(checkpoint_file(work / "det_a")) == slurp(checkpoint_file(work / "det_b"));
  return {csv && ck, std::string("loss CSV ") + (csv ? "identical" : "differs") + ", checkpoint " +
                         (ck ? "identical" : "differs")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria: one PASS/FAIL line each"};
  std::string work = (fs::temp_directory_path() / "rdte_acceptance").string();
  app.add_option("--work", work, "Scratch directory (cleared first)")->capture_default_str();
  CLI11_PARSE(app, argc, argv);
  fs::remove_all(work);
  fs::create_directories(work);

  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
      {"gradient suite", gradient_suite},
      {"shape ladder", shape_ladder},
      {"stairconv contract", stair_contract},
      {"attention normalization", attention},
      {"euler identity", euler_identity},
      {"metrics oracle", metrics_oracle},
      {"overfit experiment", [&] { return overfit(work); }},
      {"ablation harness", [&] { return ablation(work); }},
      {"determinism", [&] { return determinism(work); }},
  };
  int failed = 0;
  for (const auto& [name, check] : criteria) {
    Verdict v;
    try {
      v = check();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    failed += !v.pass;
    std::printf("%s  %-24s %s\n", v.pass ? "PASS" : "FAIL", name.c_str(), v.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%zu/%zu criteria passed\n", criteria.size() - std::size_t(failed), criteria.size());
  return failed ? 1 : 0;
}
