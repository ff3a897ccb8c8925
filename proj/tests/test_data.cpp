// SPDX-License-Identifier: Apache-2.0
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>

#include "doctest.h"
#include "rdte/data.hpp"
#include "rdte/errors.hpp"
#include "test_util.hpp"

using namespace rdte;

namespace {

std::filesystem::path fresh_dir(const std::string& name) {
  auto d = std::filesystem::temp_directory_path() / ("rdte_data_" + name);
  std::filesystem::remove_all(d);
  std::filesystem::create_directories(d);
  return d;
}

bool same(const SegSample& a, const SegSample& b) { return bit_equal(a.image, b.image) && bit_equal(a.mask, b.mask); }

// A written sample read back next to the generated one.
bool round_trips(const SegSample& back, const SegSample& made) {
  return bit_equal(back.image, rdte::testing::stored(made.image)) && bit_equal(back.mask, made.mask);
}

void write_text(const std::filesystem::path& p, const std::string& s) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  f << s;
}

}  // namespace

TEST_CASE("spec validation") {
  GenSpec s;
  CHECK_NOTHROW(s.validate());
  s.size = 60;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = GenSpec{};
  s.count = 0;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = GenSpec{};
  s.num_classes = 1;
  CHECK_THROWS_AS(s.validate(), ConfigError);
}

TEST_CASE("same seed gives identical data, other seeds differ") {
  GenSpec s;
  s.count = 8;
  s.seed = 7;
  const auto a = generate(s), b = generate(s);
  REQUIRE(a.size() == 8);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(same(a[i], b[i]));
  s.seed = 8;
  const auto c = generate(s);
  bool differs = false;
  for (std::size_t i = 0; i < a.size(); ++i) differs = differs || !same(a[i], c[i]);
  CHECK(differs);
}

TEST_CASE("samples are well formed") {
  GenSpec s;
  s.count = 100;
  s.seed = 3;
  std::size_t fg = 0, total = 0;
  std::vector<std::size_t> seen(4, 0);
  bool labels_ok = true, pixels_ok = true;
  for (const auto& x : generate(s)) {
    REQUIRE(x.image.shape() == Shape{64, 64, 1});
    REQUIRE(x.mask.shape() == Shape{64, 64});
    for (std::size_t i = 0; i < x.mask.size(); ++i) {
      const real c = x.mask[i];
      if (!(c >= 0 && c < 4 && c == std::floor(c))) {
        labels_ok = false;
        continue;
      }
      ++seen[std::size_t(c)];
      fg += c != 0;
      pixels_ok = pixels_ok && x.image[i] >= 0 && x.image[i] <= 1;
    }
    total += x.mask.size();
  }
  CHECK(labels_ok);
  CHECK(pixels_ok);
  const double frac = double(fg) / double(total);
  MESSAGE("foreground fraction " << frac);
  CHECK(frac >= 0.05);
  CHECK(frac <= 0.60);
  for (std::size_t c = 0; c < 4; ++c) CHECK(seen[c] > 0);
}

TEST_CASE("zero noise images are the class intensities") {
  GenSpec s;
  s.count = 2;
  s.noise_sigma = 0;
  bool exact = true;
  for (const auto& x : generate(s))
    for (std::size_t i = 0; i < x.mask.size(); ++i)
      exact = exact && x.image[i] == real(class_intensity(std::size_t(x.mask[i]), 4));
  CHECK(exact);
}

TEST_CASE("sample round trip and file names") {
  const auto dir = fresh_dir("rt");
  GenSpec s;
  s.count = 3;
  s.seed = 1;
  const auto samples = generate(s);
  write_dataset(dir, s, samples);
  CHECK(std::filesystem::exists(dir / "img_00002.rdtf"));
  CHECK(std::filesystem::exists(dir / "msk_00002.pgm"));
  for (std::size_t i = 0; i < 3; ++i) CHECK(round_trips(read_sample(dir, i, 4), samples[i]));
  Dataset d = read_dataset(dir);
  CHECK(d.manifest.count == 3);
  CHECK(d.manifest.size == 64);
  CHECK(d.manifest.classes == 4);
  CHECK(d.manifest.seed == 1);
  CHECK(d.manifest.format == "rdtf+pgm");
  REQUIRE(d.samples.size() == 3);
  CHECK(round_trips(d.samples[1], samples[1]));

  std::ifstream f(dir / "msk_00000.pgm", std::ios::binary);
  std::string head(15, '\0');
  f.read(head.data(), 15);
  CHECK(head == "P5\n64 64\n255\n" + head.substr(13));
}

TEST_CASE("pgm and sample errors") {
  const auto dir = fresh_dir("err");
  Tensor mask({2, 3}, {0, 1, 2, 3, 1, 0});
  write_pgm(dir / "m.pgm", mask);
  CHECK(bit_equal(read_pgm(dir / "m.pgm"), mask));

  write_text(dir / "bad_max.pgm", std::string("P5\n3 2\n65535\n") + std::string(12, '\0'));
  CHECK_THROWS_AS(read_pgm(dir / "bad_max.pgm"), FormatError);
  write_text(dir / "max15.pgm", std::string("P5\n3 2\n15\n") + std::string(6, '\0'));
  CHECK_THROWS_AS(read_pgm(dir / "max15.pgm"), FormatError);
  write_text(dir / "p2.pgm", "P2\n3 2\n255\n0 0 0 0 0 0\n");
  CHECK_THROWS_AS(read_pgm(dir / "p2.pgm"), FormatError);
  write_text(dir / "short.pgm", std::string("P5\n3 2\n255\n") + std::string(4, '\0'));
  CHECK_THROWS_AS(read_pgm(dir / "short.pgm"), TruncationError);
  write_text(dir / "comment.pgm", std::string("P5\n# a comment\n3 2\n255\n") + std::string(6, '\1'));
  CHECK(read_pgm(dir / "comment.pgm")[5] == 1);
  CHECK_THROWS_AS(read_pgm(dir / "absent.pgm"), NotFoundError);

  // class id out of range for the declared class count
  GenSpec s;
  s.count = 1;
  const auto samples = generate(s);
  write_sample(samples[0], dir, 0);
  CHECK_NOTHROW(read_sample(dir, 0, 4));
  CHECK_THROWS_AS(read_sample(dir, 0, 2), FormatError);
  CHECK_THROWS_AS(read_sample(dir, 5, 4), NotFoundError);
  CHECK_THROWS_AS(read_dataset(dir / "nowhere"), NotFoundError);
}

TEST_CASE("batches stack samples in order") {
  GenSpec s;
  s.count = 3;
  s.size = 32;
  const auto samples = generate(s);
  Tensor x = batch_images(samples, {2, 0});
  Tensor y = batch_masks(samples, {2, 0});
  CHECK(x.shape() == Shape{2, 32, 32, 1});
  CHECK(y.shape() == Shape{2, 32, 32});
  CHECK(x[0] == samples[2].image[0]);
  CHECK(y[32 * 32 + 5] == samples[0].mask[5]);
  CHECK_THROWS_AS(batch_images(samples, {}), ContractError);
}
