// SPDX-License-Identifier: Apache-2.0
#include "rdte/model.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "rdte/asbe.hpp"
#include "rdte/errors.hpp"
#include "rdte/eulerff.hpp"
#include "rdte/hvda.hpp"
#include "rdte/rdtf.hpp"

namespace rdte {

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::no_asbe: return "no_asbe";
    case Variant::no_hvda: return "no_hvda";
    case Variant::no_eulerff: return "no_eulerff";
  }
  return "full";
}

Variant parse_variant(const std::string& s) {
  for (Variant v : {Variant::full, Variant::no_asbe, Variant::no_hvda, Variant::no_eulerff})
    if (variant_name(v) == s) return v;
  throw ConfigError("unknown variant '" + s + "' (expected full, no_asbe, no_hvda or no_eulerff)");
}

// ---------------------------------------------------------------------------
// Config

void ModelConfig::validate() const {
  if (height == 0 || height % 32 != 0) throw ConfigError("height must be a positive multiple of 32, got " + std::to_string(height));
  if (width == 0 || width % 32 != 0) throw ConfigError("width must be a positive multiple of 32, got " + std::to_string(width));
  if (in_channels == 0) throw ConfigError("in_channels must be positive");
  if (num_classes < 2) throw ConfigError("num_classes must be at least 2, got " + std::to_string(num_classes));
  if (base_width == 0) throw ConfigError("base_width must be positive");
}

std::size_t ModelConfig::stage_width(int stage) const { return base_width << (stage - 1); }

nlohmann::json ModelConfig::to_json() const {
  return {{"height", height},           {"width", width},
          {"in_channels", in_channels}, {"num_classes", num_classes},
          {"base_width", base_width},   {"variant", variant_name(variant)},
          {"seed", seed}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("model config must be a JSON object");
  static const std::set<std::string> known{"height", "width", "in_channels", "num_classes", "base_width", "variant", "seed"};
  for (const auto& [key, _] : j.items())
    if (!known.count(key)) throw ConfigError("unknown model config key '" + key + "'");
  auto count = [&](const char* key, bool required, std::size_t fallback) -> std::size_t {
    if (!j.contains(key)) {
      if (required) throw ConfigError(std::string("model config is missing '") + key + "'");
      return fallback;
    }
    const auto& v = j.at(key);
    if (!v.is_number_unsigned()) throw ConfigError(std::string("model config '") + key + "' must be a non-negative integer");
    return v.get<std::size_t>();
  };
  ModelConfig c;
  c.height = count("height", true, 0);
  c.width = count("width", true, 0);
  c.in_channels = count("in_channels", true, 0);
  c.num_classes = count("num_classes", true, 0);
  c.base_width = count("base_width", false, c.base_width);
  if (j.contains("variant")) {
    if (!j.at("variant").is_string()) throw ConfigError("model config 'variant' must be a string");
    c.variant = parse_variant(j.at("variant").get<std::string>());
  }
  if (j.contains("seed")) {
    if (!j.at("seed").is_number_unsigned()) throw ConfigError("model config 'seed' must be a non-negative integer");
    c.seed = j.at("seed").get<std::uint64_t>();
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Model

namespace {

std::string enc(int i) { return "enc" + std::to_string(i); }
std::string dec(int i) { return "dec" + std::to_string(i); }

bool transformer_stage(int stage) { return stage >= 4; }

Asbe stem_asbe(const ModelConfig& c) { return {"stem", c.in_channels, c.base_width, c.base_width}; }
Conv2d stem_conv(const ModelConfig& c) { return {"stem", Conv2dSpec::same(3, 3, c.in_channels, c.base_width)}; }

Conv2d down(const ModelConfig& c, int i) {
  return {enc(i) + ".down", Conv2dSpec::valid(2, 2, c.stage_width(i), 2 * c.stage_width(i), 2)};
}
ConvTranspose2d up(const ModelConfig& c, int i) { return {dec(i) + ".up", 2 * c.stage_width(i), c.stage_width(i)}; }
EulerFF euler_merge(const ModelConfig& c, int i) { return {dec(i) + ".merge", c.stage_width(i)}; }
Conv2d plain_merge(const ModelConfig& c, int i) {
  return {dec(i) + ".merge", Conv2dSpec::valid(1, 1, 2 * c.stage_width(i), c.stage_width(i))};
}
Conv2d head(const ModelConfig& c) { return {"head", Conv2dSpec::valid(1, 1, c.base_width, c.num_classes)}; }

DetailsTransformer transformer(const ModelConfig& c, const std::string& prefix, int i) {
  return {prefix + ".block", c.stage_width(i), 3, c.variant == Variant::no_hvda};
}
ResBlock resblock(const ModelConfig& c, const std::string& prefix, int i) {
  return {prefix + ".block", c.stage_width(i)};
}

void init_block(const ModelConfig& c, const std::string& prefix, int i, ParamStore& ps, Rng& rng) {
  if (transformer_stage(i))
    transformer(c, prefix, i).init(ps, rng);
  else
    resblock(c, prefix, i).init(ps, rng);
}

Var run_block(const ModelConfig& c, const std::string& prefix, int i, Context& ctx, const Var& x) {
  return transformer_stage(i) ? transformer(c, prefix, i)(ctx, x) : resblock(c, prefix, i)(ctx, x);
}

}  // namespace

Model::Model(const ModelConfig& config) : config_(config) {
  config_.validate();
  Rng rng(config_.seed);
  if (config_.variant == Variant::no_asbe)
    stem_conv(config_).init(params_, rng);
  else
    stem_asbe(config_).init(params_, rng);
  for (int i = 1; i <= kStages; ++i) {
    init_block(config_, enc(i), i, params_, rng);
    down(config_, i).init(params_, rng);
  }
  for (int i = kStages; i >= 1; --i) {
    up(config_, i).init(params_, rng);
    if (config_.variant == Variant::no_eulerff)
      plain_merge(config_, i).init(params_, rng);
    else
      euler_merge(config_, i).init(params_, rng);
    init_block(config_, dec(i), i, params_, rng);
  }
  head(config_).init(params_, rng);
}

Var Model::forward(Context& ctx, const Var& x, ForwardTrace* trace) const {
  const ModelConfig& c = config_;
  const Shape want{x.value().rank() == 4 ? x.dim(0) : 0, c.height, c.width, c.in_channels};
  if (x.value().rank() != 4 || x.shape() != want || x.dim(0) == 0)
    throw ShapeError("model expects input N," + std::to_string(c.height) + "," + std::to_string(c.width) + "," +
                     std::to_string(c.in_channels) + ", got " + shape_str(x.shape()));
  Var h = c.variant == Variant::no_asbe ? stem_conv(c)(ctx, x) : stem_asbe(c)(ctx, x);
  if (trace) trace->stem = h.shape();

  std::vector<Var> skips;
  for (int i = 1; i <= kStages; ++i) {
    h = run_block(c, enc(i), i, ctx, h);
    skips.push_back(h);
    h = down(c, i)(ctx, h);
    if (trace) trace->encoder.push_back(h.shape());
  }
  for (int i = kStages; i >= 1; --i) {
    Var u = up(c, i)(ctx, h);
    const Var& s = skips[std::size_t(i - 1)];
    h = c.variant == Variant::no_eulerff ? plain_merge(c, i)(ctx, concat_last({s, u})) : euler_merge(c, i)(ctx, s, u);
    h = run_block(c, dec(i), i, ctx, h);
    if (trace) trace->decoder.push_back(h.shape());
  }
  return head(c)(ctx, h);
}

Tensor Model::predict(const Tensor& x, Mode mode) {
  Tape tape(false);
  Context ctx{tape, params_, mode};
  return forward(ctx, tape.constant(x)).value();
}

// ---------------------------------------------------------------------------
// Loss

namespace {

// 1 - mean over classes 1..K-1 of (2 I_k + s) / (P_k + Y_k + s), where
// I_k = sum_m p_mk y_mk, P_k = sum_m p_mk, Y_k = sum_m y_mk.
Var soft_dice_loss(const Var& probs, const Tensor& onehot, double smooth) {
  const Tensor& p = probs.value();
  const std::size_t M = p.dim(0), K = p.dim(1);
  std::vector<double> inter(K, 0), psum(K, 0), ysum(K, 0);
  for (std::size_t m = 0; m < M; ++m)
    for (std::size_t k = 1; k < K; ++k) {
      const double pv = p[m * K + k], yv = onehot[m * K + k];
      inter[k] += pv * yv;
      psum[k] += pv;
      ysum[k] += yv;
    }
  double mean_dice = 0;
  for (std::size_t k = 1; k < K; ++k) mean_dice += (2 * inter[k] + smooth) / (psum[k] + ysum[k] + smooth);
  mean_dice /= double(K - 1);
  const int ip = probs.id();
  return probs.tape().record(
      Tensor({1}, real(1 - mean_dice)), {probs},
      [ip, M, K, inter, psum, ysum, smooth, onehot](Tape& t, const Tensor& g) {
        Tensor& gp = t.grad(ip);
        const double scale = -double(g[0]) / double(K - 1);
        for (std::size_t k = 1; k < K; ++k) {
          const double s = psum[k] + ysum[k] + smooth, num = 2 * inter[k] + smooth;
          for (std::size_t m = 0; m < M; ++m)
            gp[m * K + k] += real(scale * (2 * onehot[m * K + k] * s - num) / (s * s));
        }
      });
}

}  // namespace

LossParts segmentation_loss(const Var& logits, const Tensor& labels) {
  if (logits.value().rank() != 4) throw ShapeError("loss expects N,H,W,K logits, got " + shape_str(logits.shape()));
  const std::size_t N = logits.dim(0), H = logits.dim(1), W = logits.dim(2), K = logits.dim(3);
  if (labels.shape() != Shape{N, H, W})
    throw ShapeError("labels " + shape_str(labels.shape()) + " do not match logits " + shape_str(logits.shape()));
  if (K < 2) throw ShapeError("loss needs at least two classes");
  const std::size_t M = N * H * W;
  Tensor onehot({M, K});
  for (std::size_t m = 0; m < M; ++m) {
    const double l = labels[m];
    if (!(l >= 0 && l < double(K)) || l != std::floor(l))
      throw ContractError("label " + std::to_string(l) + " outside [0, " + std::to_string(K) + ")");
    onehot[m * K + std::size_t(l)] = 1;
  }
  Tape& tape = logits.tape();
  Var z = reshape(logits, {M, K});
  Var y = tape.constant(onehot);
  Var ce = scale(sum(mul(log_softmax_rows(z), y)), real(-1.0 / double(M)));
  Var dice = soft_dice_loss(softmax_rows(z), onehot, 1.0);
  LossParts out;
  out.ce = ce.value()[0];
  out.dice = dice.value()[0];
  out.total = add(scale(ce, real(0.5)), scale(dice, real(0.5)));
  return out;
}

// ---------------------------------------------------------------------------
// Adam

void Adam::step(ParamStore& params) {
  ++t;
  const double c1 = 1 - std::pow(beta1, double(t)), c2 = 1 - std::pow(beta2, double(t));
  for (auto& [name, p] : params) {
    if (!p.trainable) continue;
    auto it = moments.find(name);
    if (it == moments.end())
      it = moments.emplace(name, std::make_pair(Tensor::zeros(p.value.shape()), Tensor::zeros(p.value.shape()))).first;
    Tensor& m = it->second.first;
    Tensor& v = it->second.second;
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      m[i] = real(beta1 * m[i] + (1 - beta1) * g);
      v[i] = real(beta2 * v[i] + (1 - beta2) * g * g);
      const double mh = m[i] / c1, vh = v[i] / c2;
      p.value[i] = real(p.value[i] - lr * mh / (std::sqrt(vh) + eps));
    }
  }
}

// ---------------------------------------------------------------------------
// Checkpoint

void save_checkpoint(const std::filesystem::path& path, const Model& model, std::uint64_t step) {
  std::ostringstream os(std::ios::binary);
  os.write("RDTC", 4);
  le::put_u32(os, kCheckpointVersion);
  le::put_u32(os, std::uint32_t(model.params().size()));
  for (const auto& [name, p] : model.params()) {
    if (name.size() > 0xFFFF) throw FormatError("parameter name too long: " + name);
    le::put_u16(os, std::uint16_t(name.size()));
    os.write(name.data(), std::streamsize(name.size()));
    write_rdtf(os, p.value);
  }
  nlohmann::json j = model.config().to_json();
  j["step"] = step;
  const std::string blob = j.dump();
  le::put_u32(os, std::uint32_t(blob.size()));
  os.write(blob.data(), std::streamsize(blob.size()));

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot open " + path.string() + " for writing");
  const std::string bytes = os.str();
  f.write(bytes.data(), std::streamsize(bytes.size()));
  if (!f) throw Error("failed writing " + path.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw NotFoundError("checkpoint not found: " + path.string());
  char magic[4];
  le::get_bytes(f, magic, 4);
  if (std::string(magic, 4) != "RDTC") throw FormatError(path.string() + " is not a checkpoint (bad magic)");
  const std::uint32_t version = le::get_u32(f);
  if (version != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  const std::uint32_t count = le::get_u32(f);
  std::map<std::string, Tensor> tensors;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name(le::get_u16(f), '\0');
    le::get_bytes(f, name.data(), name.size());
    Tensor t = read_rdtf(f);
    if (!tensors.emplace(name, std::move(t)).second) throw FormatError("duplicate parameter '" + name + "'");
  }
  std::string blob(le::get_u32(f), '\0');
  le::get_bytes(f, blob.data(), blob.size());
  if (f.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes after checkpoint config");

  nlohmann::json j;
  try {
    j = nlohmann::json::parse(blob);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint config is not valid JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("step") || !j.at("step").is_number_unsigned())
    throw FormatError("checkpoint config lacks a step counter");
  const std::uint64_t step = j.at("step").get<std::uint64_t>();
  j.erase("step");
  ModelConfig config;
  try {
    config = ModelConfig::from_json(j);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint config invalid: ") + e.what());
  }

  LoadedCheckpoint out{Model(config), step};
  if (tensors.size() != out.model.params().size())
    throw FormatError("checkpoint holds " + std::to_string(tensors.size()) + " tensors, config implies " +
                      std::to_string(out.model.params().size()));
  for (auto& [name, p] : out.model.params()) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw FormatError("checkpoint lacks parameter '" + name + "'");
    if (it->second.shape() != p.value.shape())
      throw ShapeError("parameter '" + name + "' has shape " + shape_str(it->second.shape()) + ", config implies " +
                       shape_str(p.value.shape()));
    p.value = std::move(it->second);
  }
  return out;
}

}  // namespace rdte
