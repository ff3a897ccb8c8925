// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "rdte/tensor.hpp"

namespace rdte {

/// One image and its label map.
struct SegSample {
  Tensor image;  // H,W,1 in [0,1]
  Tensor mask;   // H,W of class ids
};

enum class ShapeKind { ellipse, rectangle, annulus };

/// Settings of the synthetic generator.
///
/// Foreground class c (1..num_classes-1) is drawn as shape kind (c-1) mod 3,
/// so the default four classes are background, ellipse, rectangle, annulus.
struct GenSpec {
  std::size_t count = 8;
  std::size_t size = 64;
  std::size_t num_classes = 4;
  double noise_sigma = 0.05;
  std::uint64_t seed = 0;

  /// Throws ConfigError naming the offending field.
  void validate() const;
};

/// Mean intensity of a class before noise.
double class_intensity(std::size_t cls, std::size_t num_classes);

/// Each sample holds 1-3 shapes with random centre, semi-axes of 8-24 px
/// (the minor one 0.5-1x the major), and rotation in [0, pi). Later shapes
/// paint over earlier ones. A pixel belongs to a shape when its centre is
/// inside it. Same spec, same bits.
std::vector<SegSample> generate(const GenSpec& spec);

/// "img_%05d.rdtf" and "msk_%05d.pgm" for index.
std::filesystem::path image_path(const std::filesystem::path& dir, std::size_t index);
std::filesystem::path mask_path(const std::filesystem::path& dir, std::size_t index);

/// Image as an RDTF tensor, mask as binary PGM (P5, maxval 255).
void write_sample(const SegSample& sample, const std::filesystem::path& dir, std::size_t index);

/// NotFoundError for a missing file; FormatError for a malformed PGM header,
/// a maxval other than 255, a class id >= num_classes, or image and mask
/// that disagree in size; TruncationError for short files.
SegSample read_sample(const std::filesystem::path& dir, std::size_t index, std::size_t num_classes);

/// Binary PGM codec for label maps (H,W tensors of integers 0..255).
void write_pgm(const std::filesystem::path& path, const Tensor& mask);
Tensor read_pgm(const std::filesystem::path& path);

/// Contents of manifest.json.
struct Manifest {
  std::size_t count = 0, size = 0, classes = 0;
  std::uint64_t seed = 0;
  std::string format = "rdtf+pgm";

  nlohmann::json to_json() const;
  /// Throws FormatError on missing or mistyped fields and unknown formats.
  static Manifest from_json(const nlohmann::json& j);
};

/// Writes every sample and the manifest.
void write_dataset(const std::filesystem::path& dir, const GenSpec& spec, const std::vector<SegSample>& samples);

struct Dataset {
  Manifest manifest;
  std::vector<SegSample> samples;
};

/// Reads manifest.json and every sample it lists.
Dataset read_dataset(const std::filesystem::path& dir);

/// Images stacked to N,H,W,1 and masks to N,H,W, in the order given.
Tensor batch_images(const std::vector<SegSample>& samples, const std::vector<std::size_t>& indices);
Tensor batch_masks(const std::vector<SegSample>& samples, const std::vector<std::size_t>& indices);

}  // namespace rdte
