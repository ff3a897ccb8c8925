// SPDX-License-Identifier: Apache-2.0
#include "rdte/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "rdte/errors.hpp"
#include "rdte/model.hpp"

namespace rdte {

bool Mask::empty() const { return std::none_of(bits.begin(), bits.end(), [](auto b) { return b != 0; }); }

std::size_t Mask::count() const { return std::size_t(std::count_if(bits.begin(), bits.end(), [](auto b) { return b != 0; })); }

Mask class_mask(const Tensor& labels, std::size_t cls) {
  if (labels.rank() != 2) throw ShapeError("label map must be H,W, got " + shape_str(labels.shape()));
  Mask m(labels.dim(0), labels.dim(1));
  for (std::size_t i = 0; i < labels.size(); ++i) m.bits[i] = labels[i] == real(cls);
  return m;
}

namespace {

void check_same(const Mask& a, const Mask& b) {
  if (a.height != b.height || a.width != b.width)
    throw ShapeError("mask sizes differ: " + std::to_string(a.height) + "x" + std::to_string(a.width) + " vs " +
                     std::to_string(b.height) + "x" + std::to_string(b.width));
}

// Exact squared Euclidean distance from every pixel to the nearest set
// pixel (Felzenszwalb-Huttenlocher, separable lower envelope of parabolas).
// Integer-valued, so sqrt of an entry equals the direct pairwise distance.
constexpr double kFar = 1e18;

void envelope_1d(const std::vector<double>& f, std::vector<double>& d, std::vector<std::size_t>& v,
                 std::vector<double>& z) {
  const std::size_t n = f.size();
  std::size_t k = 0;
  bool any = false;
  for (std::size_t q = 0; q < n; ++q) {
    if (f[q] >= kFar) continue;
    if (!any) {
      v[0] = q, z[0] = -INFINITY, z[1] = INFINITY, any = true;
      continue;
    }
    double s;
    for (;;) {
      const double p = double(v[k]);
      s = ((f[q] + double(q) * double(q)) - (f[v[k]] + p * p)) / (2 * (double(q) - p));
      if (s > z[k]) break;
      --k;  // z[0] is -inf, so this stops at k = 0
    }
    ++k;
    v[k] = q, z[k] = s, z[k + 1] = INFINITY;
  }
  if (!any) {
    std::fill(d.begin(), d.end(), kFar);
    return;
  }
  k = 0;
  for (std::size_t q = 0; q < n; ++q) {
    while (z[k + 1] < double(q)) ++k;
    const double dq = double(q) - double(v[k]);
    d[q] = dq * dq + f[v[k]];
  }
}

std::vector<double> squared_distance_to(const std::vector<std::size_t>& sites, std::size_t h, std::size_t w) {
  std::vector<double> g(h * w, kFar);
  for (std::size_t i : sites) g[i] = 0;
  const std::size_t n = std::max(h, w);
  std::vector<double> f(n), d(n), z(n + 1);
  std::vector<std::size_t> v(n);
  // columns
  f.resize(h), d.resize(h);
  for (std::size_t x = 0; x < w; ++x) {
    for (std::size_t y = 0; y < h; ++y) f[y] = g[y * w + x];
    envelope_1d(f, d, v, z);
    for (std::size_t y = 0; y < h; ++y) g[y * w + x] = d[y];
  }
  // rows
  f.resize(w), d.resize(w);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) f[x] = g[y * w + x];
    envelope_1d(f, d, v, z);
    for (std::size_t x = 0; x < w; ++x) g[y * w + x] = d[x];
  }
  return g;
}

double nearest_rank_95(std::vector<double>& pooled) {
  std::sort(pooled.begin(), pooled.end());
  const std::size_t rank = (95 * pooled.size() + 99) / 100;  // ceil(0.95 n), 1-based
  return pooled[rank - 1];
}

}  // namespace

double dsc(const Mask& pred, const Mask& gt) {
  check_same(pred, gt);
  std::size_t inter = 0, p = 0, g = 0;
  for (std::size_t i = 0; i < pred.bits.size(); ++i) {
    const bool a = pred.bits[i] != 0, b = gt.bits[i] != 0;
    inter += a && b;
    p += a;
    g += b;
  }
  if (p + g == 0) return 1.0;
  return 2.0 * double(inter) / double(p + g);
}

std::vector<std::size_t> boundary(const Mask& m) {
  std::vector<std::size_t> out;
  const std::size_t h = m.height, w = m.width;
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      if (!m.at(y, x)) continue;
      const bool edge = y == 0 || x == 0 || y + 1 == h || x + 1 == w || !m.at(y - 1, x) || !m.at(y + 1, x) ||
                        !m.at(y, x - 1) || !m.at(y, x + 1);
      if (edge) out.push_back(y * w + x);
    }
  return out;
}

Hd95 hd95(const Mask& pred, const Mask& gt) {
  check_same(pred, gt);
  const bool pe = pred.empty(), ge = gt.empty();
  if (pe && ge) return {0.0, false};
  if (pe || ge) return {std::hypot(double(pred.height), double(pred.width)), true};
  const auto bp = boundary(pred), bg = boundary(gt);
  const auto to_g = squared_distance_to(bg, gt.height, gt.width);
  const auto to_p = squared_distance_to(bp, pred.height, pred.width);
  std::vector<double> pooled;
  pooled.reserve(bp.size() + bg.size());
  for (std::size_t i : bp) pooled.push_back(std::sqrt(to_g[i]));
  for (std::size_t i : bg) pooled.push_back(std::sqrt(to_p[i]));
  return {nearest_rank_95(pooled), false};
}

nlohmann::json EvalReport::to_json() const {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& c : per_class)
    rows.push_back({{"class", c.cls},
                    {"dsc", opt(c.dsc)},
                    {"hd95", opt(c.hd95)},
                    {"hd95_sentinel_count", c.hd95_sentinel_count},
                    {"samples", c.samples}});
  nlohmann::json j{{"per_class", rows}, {"mean_dsc", mean_dsc}, {"mean_hd95", mean_hd95}, {"samples", samples},
                   {"hd95_unit", "pixels"}};
  if (variant) j["variant"] = *variant;
  return j;
}

EvalReport EvalReport::from_json(const nlohmann::json& j) {
  auto opt = [](const nlohmann::json& v) {
    return v.is_null() ? std::optional<double>() : std::optional<double>(v.get<double>());
  };
  EvalReport r;
  try {
    for (const auto& row : j.at("per_class")) {
      ClassScore c;
      c.cls = row.at("class").get<std::size_t>();
      c.dsc = opt(row.at("dsc"));
      c.hd95 = opt(row.at("hd95"));
      c.hd95_sentinel_count = row.at("hd95_sentinel_count").get<std::size_t>();
      if (row.contains("samples")) c.samples = row.at("samples").get<std::size_t>();
      r.per_class.push_back(c);
    }
    r.mean_dsc = j.at("mean_dsc").get<double>();
    r.mean_hd95 = j.at("mean_hd95").get<double>();
    r.samples = j.at("samples").get<std::size_t>();
    if (j.contains("variant")) r.variant = j.at("variant").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad evaluation report: ") + e.what());
  }
  return r;
}

EvalReport evaluate_labels(const std::vector<Tensor>& preds, const std::vector<Tensor>& gts, std::size_t num_classes) {
  if (preds.size() != gts.size()) throw ShapeError("prediction and ground-truth counts differ");
  if (gts.empty()) throw ContractError("nothing to evaluate");
  EvalReport r;
  r.samples = gts.size();
  for (std::size_t c = 1; c < num_classes; ++c) {
    ClassScore s;
    s.cls = c;
    double dsum = 0, hsum = 0;
    for (std::size_t i = 0; i < gts.size(); ++i) {
      const Mask g = class_mask(gts[i], c);
      if (g.empty()) continue;
      const Mask p = class_mask(preds[i], c);
      const Hd95 h = hd95(p, g);
      dsum += dsc(p, g);
      hsum += h.value;
      s.hd95_sentinel_count += h.sentinel;
      ++s.samples;
    }
    if (s.samples > 0) {
      s.dsc = dsum / double(s.samples);
      s.hd95 = hsum / double(s.samples);
    }
    r.per_class.push_back(s);
  }
  std::size_t defined = 0;
  for (const auto& s : r.per_class)
    if (s.dsc) {
      r.mean_dsc += *s.dsc;
      r.mean_hd95 += *s.hd95;
      ++defined;
    }
  if (defined > 0) {
    r.mean_dsc /= double(defined);
    r.mean_hd95 /= double(defined);
  }
  return r;
}

std::vector<Tensor> argmax_labels(const Tensor& logits) {
  if (logits.rank() != 4) throw ShapeError("logits must be N,H,W,K, got " + shape_str(logits.shape()));
  const std::size_t n = logits.dim(0), h = logits.dim(1), w = logits.dim(2), k = logits.dim(3);
  std::vector<Tensor> out;
  for (std::size_t s = 0; s < n; ++s) {
    Tensor lab({h, w});
    for (std::size_t p = 0; p < h * w; ++p) {
      const real* row = logits.ptr() + (s * h * w + p) * k;
      lab[p] = real(std::max_element(row, row + k) - row);
    }
    out.push_back(std::move(lab));
  }
  return out;
}

EvalReport evaluate(Model& model, const std::vector<SegSample>& samples, std::size_t batch) {
  if (batch == 0) throw ContractError("batch must be positive");
  std::vector<Tensor> preds, gts;
  for (std::size_t at = 0; at < samples.size(); at += batch) {
    std::vector<std::size_t> idx;
    for (std::size_t i = at; i < std::min(samples.size(), at + batch); ++i) idx.push_back(i);
    for (auto& p : argmax_labels(model.predict(batch_images(samples, idx), Mode::eval))) preds.push_back(std::move(p));
  }
  for (const auto& s : samples) gts.push_back(s.mask);
  return evaluate_labels(preds, gts, model.config().num_classes);
}

}  // namespace rdte
