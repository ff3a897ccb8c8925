// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "rdte/nn.hpp"

namespace rdte {

enum class Variant { full, no_asbe, no_hvda, no_eulerff };

std::string variant_name(Variant v);
/// Throws ConfigError for unknown names.
Variant parse_variant(const std::string& s);

struct ModelConfig {
  std::size_t height = 64, width = 64;
  std::size_t in_channels = 1;
  std::size_t num_classes = 4;
  std::size_t base_width = 16;
  Variant variant = Variant::full;
  std::uint64_t seed = 0;

  /// Throws ConfigError naming the offending field.
  void validate() const;
  /// base_width * 2^(stage - 1), stage in 1..5.
  std::size_t stage_width(int stage) const;

  nlohmann::json to_json() const;
  /// height, width, in_channels and num_classes are required; unknown keys
  /// are rejected.
  static ModelConfig from_json(const nlohmann::json& j);
};

inline constexpr int kStages = 5;

/// Shapes seen during a forward pass, for checking the stage ladder.
struct ForwardTrace {
  Shape stem;
  std::vector<Shape> encoder;  // after each stage's downsampling
  std::vector<Shape> decoder;  // after each decoder stage, deepest first
};

/// Stem, five encoder stages (ResBlock x3, Details Transformer x2) each
/// ending in a 2x2 stride-2 conv, five mirrored decoder stages (deconv,
/// skip merge, block), and a 1x1 class head.
class Model {
 public:
  explicit Model(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  /// Logits N,H,W,num_classes.
  Var forward(Context& ctx, const Var& x, ForwardTrace* trace = nullptr) const;
  /// Forward without recording.
  Tensor predict(const Tensor& x, Mode mode = Mode::eval);

  /// Trainable scalars.
  std::size_t parameter_count() const { return params_.scalar_count(); }

 private:
  ModelConfig config_;
  ParamStore params_;
};

// ---------------------------------------------------------------------------
// Loss

struct LossParts {
  Var total;           // 0.5 * ce + 0.5 * dice
  double ce = 0;       // mean pixel cross-entropy
  double dice = 0;     // 1 - mean soft Dice over foreground classes
};

/// labels: N,H,W of class ids. Throws ContractError for ids outside
/// [0, num_classes) and ShapeError for mismatched extents.
LossParts segmentation_loss(const Var& logits, const Tensor& labels);

// ---------------------------------------------------------------------------
// Optimizer

struct Adam {
  double lr = 1e-3, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::uint64_t t = 0;
  std::map<std::string, std::pair<Tensor, Tensor>> moments;

  /// One update of every trainable entry from its grad.
  void step(ParamStore& params);
};

// ---------------------------------------------------------------------------
// Checkpoint

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// "RDTC" | u32 version | u32 count | count x (u16 name length, name, RDTF
/// record) | u32 length | JSON of the config plus a "step" field.
void save_checkpoint(const std::filesystem::path& path, const Model& model, std::uint64_t step = 0);

struct LoadedCheckpoint {
  Model model;
  std::uint64_t step = 0;
};

/// NotFoundError if missing, FormatError on bad magic/version/content,
/// TruncationError on a short file, ShapeError when a tensor does not match
/// the embedded config.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace rdte
