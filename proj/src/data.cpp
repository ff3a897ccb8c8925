// SPDX-License-Identifier: Apache-2.0
#include "rdte/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>

#include "rdte/errors.hpp"
#include "rdte/rdtf.hpp"

namespace rdte {

void GenSpec::validate() const {
  if (count < 1) throw ConfigError("count must be at least 1");
  if (size < 32 || size % 32 != 0) throw ConfigError("size must be a positive multiple of 32, got " + std::to_string(size));
  if (num_classes < 2 || num_classes > 256)
    throw ConfigError("classes must be in [2, 256], got " + std::to_string(num_classes));
  if (!(noise_sigma >= 0) || !std::isfinite(noise_sigma)) throw ConfigError("noise_sigma must be finite and >= 0");
}

double class_intensity(std::size_t cls, std::size_t num_classes) {
  if (cls == 0) return 0.1;
  const double span = num_classes > 2 ? double(num_classes - 2) : 1.0;
  return 0.3 + 0.6 * double(cls - 1) / span;
}

namespace {

struct Placed {
  std::size_t cls;
  ShapeKind kind;
  double cx, cy, a, b, cos_t, sin_t;

  bool contains(double x, double y) const {
    const double dx = x - cx, dy = y - cy;
    const double u = (dx * cos_t + dy * sin_t) / a;
    const double v = (-dx * sin_t + dy * cos_t) / b;
    switch (kind) {
      case ShapeKind::ellipse: return u * u + v * v <= 1;
      case ShapeKind::rectangle: return std::abs(u) <= 1 && std::abs(v) <= 1;
      case ShapeKind::annulus: {
        const double r = u * u + v * v;
        return r <= 1 && r > 0.25;  // inner semi-axes are half the outer ones
      }
    }
    return false;
  }
};

SegSample draw_sample(const GenSpec& spec, std::mt19937_64& rng) {
  const std::size_t n = spec.size;
  std::uniform_int_distribution<int> count(1, 3);
  std::uniform_int_distribution<std::size_t> cls(1, spec.num_classes - 1);
  std::uniform_real_distribution<double> centre(0, double(n)), scale(8, 24), aspect(0.5, 1),
      angle(0, std::numbers::pi);
  std::vector<Placed> shapes(std::size_t(count(rng)));
  for (auto& s : shapes) {
    s.cls = cls(rng);
    s.kind = ShapeKind((s.cls - 1) % 3);
    s.cx = centre(rng), s.cy = centre(rng);
    s.a = scale(rng);
    s.b = s.a * aspect(rng);
    const double t = angle(rng);
    s.cos_t = std::cos(t), s.sin_t = std::sin(t);
  }
  SegSample out{Tensor({n, n, 1}), Tensor({n, n})};
  std::normal_distribution<double> noise(0, 1);
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) {
      std::size_t c = 0;
      for (const auto& s : shapes)
        if (s.contains(double(x) + 0.5, double(y) + 0.5)) c = s.cls;
      const std::size_t i = y * n + x;
      out.mask[i] = real(c);
      const double v = class_intensity(c, spec.num_classes) + spec.noise_sigma * noise(rng);
      out.image[i] = real(std::clamp(v, 0.0, 1.0));
    }
  return out;
}

std::string numbered(const char* pattern, std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, pattern, int(index));
  return buf;
}

// Next whitespace-delimited token of a PGM header, skipping '#' comments.
std::string pgm_token(std::istream& is) {
  std::string tok;
  int ch;
  while ((ch = is.get()) != EOF) {
    if (ch == '#') {
      while ((ch = is.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(char(ch));
  }
  if (tok.empty()) throw TruncationError("PGM header ends early");
  return tok;
}

std::size_t pgm_number(std::istream& is, const char* what) {
  const std::string tok = pgm_token(is);
  if (tok.empty() || tok.size() > 9 || !std::all_of(tok.begin(), tok.end(), [](char c) { return std::isdigit(c); }))
    throw FormatError(std::string("PGM ") + what + " is not a number: '" + tok + "'");
  return std::stoul(tok);
}

}  // namespace

std::vector<SegSample> generate(const GenSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::vector<SegSample> out;
  out.reserve(spec.count);
  for (std::size_t i = 0; i < spec.count; ++i) out.push_back(draw_sample(spec, rng));
  return out;
}

std::filesystem::path image_path(const std::filesystem::path& dir, std::size_t index) {
  return dir / numbered("img_%05d.rdtf", index);
}

std::filesystem::path mask_path(const std::filesystem::path& dir, std::size_t index) {
  return dir / numbered("msk_%05d.pgm", index);
}

void write_pgm(const std::filesystem::path& path, const Tensor& mask) {
  if (mask.rank() != 2) throw ShapeError("PGM mask must be H,W, got " + shape_str(mask.shape()));
  std::string bytes(mask.size(), '\0');
  for (std::size_t i = 0; i < mask.size(); ++i) {
    const real v = mask[i];
    if (!(v >= 0 && v <= 255) || v != std::floor(v)) throw ContractError("mask value outside 0..255 integers");
    bytes[i] = char(static_cast<unsigned char>(v));
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot write " + path.string());
  f << "P5\n" << mask.dim(1) << ' ' << mask.dim(0) << "\n255\n";
  f.write(bytes.data(), std::streamsize(bytes.size()));
  if (!f) throw Error("write failed: " + path.string());
}

Tensor read_pgm(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw NotFoundError("cannot open " + path.string());
  if (pgm_token(f) != "P5") throw FormatError(path.string() + ": not a binary PGM (P5)");
  const std::size_t w = pgm_number(f, "width"), h = pgm_number(f, "height"), maxval = pgm_number(f, "maxval");
  if (w == 0 || h == 0) throw FormatError(path.string() + ": empty PGM");
  if (maxval != 255) throw FormatError(path.string() + ": PGM maxval must be 255, got " + std::to_string(maxval));
  // pgm_token consumed the single whitespace byte after maxval
  std::string bytes(w * h, '\0');
  le::get_bytes(f, bytes.data(), bytes.size());
  Tensor out({h, w});
  for (std::size_t i = 0; i < bytes.size(); ++i) out[i] = real(static_cast<unsigned char>(bytes[i]));
  return out;
}

void write_sample(const SegSample& sample, const std::filesystem::path& dir, std::size_t index) {
  save_rdtf(image_path(dir, index), sample.image);
  write_pgm(mask_path(dir, index), sample.mask);
}

SegSample read_sample(const std::filesystem::path& dir, std::size_t index, std::size_t num_classes) {
  const auto ip = image_path(dir, index), mp = mask_path(dir, index);
  if (!std::filesystem::exists(ip)) throw NotFoundError("missing image " + ip.string());
  if (!std::filesystem::exists(mp)) throw NotFoundError("missing mask " + mp.string());
  SegSample s{load_rdtf(ip), read_pgm(mp)};
  if (s.image.rank() != 3 || s.image.dim(2) != 1 || s.image.dim(0) != s.mask.dim(0) ||
      s.image.dim(1) != s.mask.dim(1))
    throw FormatError("image " + shape_str(s.image.shape()) + " does not match mask " + shape_str(s.mask.shape()) +
                      " at index " + std::to_string(index));
  for (real v : s.mask.data())
    if (std::size_t(v) >= num_classes)
      throw FormatError(mp.string() + ": class id " + std::to_string(int(v)) + " >= " + std::to_string(num_classes));
  return s;
}

nlohmann::json Manifest::to_json() const {
  return {{"count", count}, {"size", size}, {"classes", classes}, {"seed", seed}, {"format", format}};
}

Manifest Manifest::from_json(const nlohmann::json& j) {
  Manifest m;
  try {
    m.count = j.at("count").get<std::size_t>();
    m.size = j.at("size").get<std::size_t>();
    m.classes = j.at("classes").get<std::size_t>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.format = j.at("format").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad manifest: ") + e.what());
  }
  if (m.format != "rdtf+pgm") throw FormatError("unsupported dataset format '" + m.format + "'");
  if (m.count == 0) throw FormatError("manifest lists no samples");
  return m;
}

void write_dataset(const std::filesystem::path& dir, const GenSpec& spec, const std::vector<SegSample>& samples) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < samples.size(); ++i) write_sample(samples[i], dir, i);
  Manifest m{samples.size(), spec.size, spec.num_classes, spec.seed};
  std::ofstream f(dir / "manifest.json", std::ios::trunc);
  if (!f) throw Error("cannot write " + (dir / "manifest.json").string());
  f << m.to_json().dump(2) << '\n';
  if (!f) throw Error("write failed: " + (dir / "manifest.json").string());
}

Dataset read_dataset(const std::filesystem::path& dir) {
  const auto mp = dir / "manifest.json";
  std::ifstream f(mp);
  if (!f) throw NotFoundError("no manifest.json in " + dir.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(mp.string() + ": " + e.what());
  }
  Dataset d{Manifest::from_json(j), {}};
  for (std::size_t i = 0; i < d.manifest.count; ++i) {
    d.samples.push_back(read_sample(dir, i, d.manifest.classes));
    if (d.samples.back().mask.dim(0) != d.manifest.size || d.samples.back().mask.dim(1) != d.manifest.size)
      throw FormatError("sample " + std::to_string(i) + " is not " + std::to_string(d.manifest.size) + " square");
  }
  return d;
}

namespace {

Tensor stack(const std::vector<SegSample>& samples, const std::vector<std::size_t>& indices, bool images) {
  if (indices.empty()) throw ContractError("empty batch");
  const Tensor& first = images ? samples.at(indices[0]).image : samples.at(indices[0]).mask;
  Shape shape{indices.size()};
  for (auto e : first.shape()) shape.push_back(e);
  Tensor out(shape);
  std::size_t at = 0;
  for (std::size_t i : indices) {
    const Tensor& t = images ? samples.at(i).image : samples.at(i).mask;
    if (!t.same_shape(first)) throw ShapeError("samples of different sizes in one batch");
    std::copy(t.data().begin(), t.data().end(), out.data().begin() + long(at));
    at += t.size();
  }
  return out;
}

}  // namespace

Tensor batch_images(const std::vector<SegSample>& samples, const std::vector<std::size_t>& indices) {
  return stack(samples, indices, true);
}

Tensor batch_masks(const std::vector<SegSample>& samples, const std::vector<std::size_t>& indices) {
  return stack(samples, indices, false);
}

}  // namespace rdte
