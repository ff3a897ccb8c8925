// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>

#include "json.hpp"
#include "rdte/data.hpp"
#include "rdte/model.hpp"

namespace rdte {

struct TrainSettings {
  std::size_t steps = 0, batch = 0;
  double lr = 0;
  std::uint64_t seed = 0;
};

/// A training run, as read from its JSON config:
/// {"model": {...}, "train": {"steps", "batch", "lr", "seed"}, "data": {"dir"}, "out"}.
struct RunConfig {
  ModelConfig model;
  TrainSettings train;
  std::filesystem::path data_dir;
  std::filesystem::path out;

  /// Throws ConfigError on unknown or missing keys and out-of-range values.
  static RunConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  /// NotFoundError for a missing file, ConfigError for bad JSON or content.
  static RunConfig load(const std::filesystem::path& path);
};

/// Files a run writes under `out`.
std::filesystem::path checkpoint_file(const std::filesystem::path& out);
std::filesystem::path loss_log_file(const std::filesystem::path& out);

struct TrainResult {
  bool diverged = false;
  std::size_t steps_done = 0;  // optimizer steps taken
  double first_loss = 0, last_loss = 0;
};

/// Called after every step with (step, loss).
using StepCallback = std::function<void(std::size_t, double)>;

/// Trains from a fresh model seeded by config.model.seed, drawing batches
/// from a per-epoch shuffle seeded by train.seed. Writes the loss log
/// ("step,loss", one row per step) and the final checkpoint. On a diverged
/// loss (non-finite or above 1e4) it stops, logs that step, and
/// checkpoints the last parameters that gave a sound loss; the checkpoint's
/// step counter is the number of updates those parameters had.
///
/// Throws ConfigError when the dataset does not match the model config.
TrainResult train(const RunConfig& config, const StepCallback& on_step = {});

/// Throws ConfigError unless the dataset's size and class count match.
void check_compatible(const ModelConfig& model, const Manifest& manifest);

}  // namespace rdte
