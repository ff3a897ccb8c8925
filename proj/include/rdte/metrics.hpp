// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "rdte/data.hpp"
#include "rdte/tensor.hpp"

namespace rdte {

class Model;

/// Row-major binary mask.
struct Mask {
  std::size_t height = 0, width = 0;
  std::vector<std::uint8_t> bits;

  Mask() = default;
  Mask(std::size_t h, std::size_t w) : height(h), width(w), bits(h * w, 0) {}

  bool at(std::size_t y, std::size_t x) const { return bits[y * width + x] != 0; }
  bool empty() const;
  std::size_t count() const;
};

/// Pixels of an H,W label map equal to cls.
Mask class_mask(const Tensor& labels, std::size_t cls);

/// 2|P n G| / (|P| + |G|); 1 when both are empty. ShapeError on mismatch.
double dsc(const Mask& pred, const Mask& gt);

/// Mask pixels with at least one 4-neighbour outside the mask; the image
/// border counts as outside. Returned as flat indices, ascending.
std::vector<std::size_t> boundary(const Mask& m);

struct Hd95 {
  double value = 0;  // pixels
  bool sentinel = false;
};

/// 95th percentile of boundary-to-boundary distances, pooled over both
/// directions, at nearest rank ceil(0.95 n). Exactly one empty mask gives
/// the image diagonal, flagged as a sentinel; both empty give 0.
Hd95 hd95(const Mask& pred, const Mask& gt);

struct ClassScore {
  std::size_t cls = 0;
  std::optional<double> dsc, hd95;  // unset when the class never occurs in gt
  std::size_t hd95_sentinel_count = 0;
  std::size_t samples = 0;  // samples whose gt contains the class
};

/// Per-class means over the samples where the class occurs, foreground
/// classes only. HD95 is in pixels.
struct EvalReport {
  std::vector<ClassScore> per_class;
  double mean_dsc = 0, mean_hd95 = 0;  // over classes with defined values
  std::size_t samples = 0;
  std::optional<std::string> variant;

  nlohmann::json to_json() const;
  /// Throws FormatError on missing or mistyped fields.
  static EvalReport from_json(const nlohmann::json& j);
};

/// Scores label-map predictions against ground truth (both H,W tensors).
EvalReport evaluate_labels(const std::vector<Tensor>& preds, const std::vector<Tensor>& gts, std::size_t num_classes);

/// Per-pixel argmax over the last axis of N,H,W,K logits, ties to the lower
/// class; returns N tensors of H,W.
std::vector<Tensor> argmax_labels(const Tensor& logits);

/// Eval-mode predictions of the model on every sample, in batches.
EvalReport evaluate(Model& model, const std::vector<SegSample>& samples, std::size_t batch = 4);

}  // namespace rdte
