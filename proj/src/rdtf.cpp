// SPDX-License-Identifier: Apache-2.0
#include "rdte/rdtf.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <vector>

#include "rdte/errors.hpp"

namespace rdte {

namespace le {

void put_u16(std::ostream& os, std::uint16_t v) {
  const char b[2] = {char(v & 0xff), char(v >> 8)};
  os.write(b, 2);
}

void put_u32(std::ostream& os, std::uint32_t v) {
  const char b[4] = {char(v & 0xff), char((v >> 8) & 0xff), char((v >> 16) & 0xff), char(v >> 24)};
  os.write(b, 4);
}

void put_f32(std::ostream& os, float v) { put_u32(os, std::bit_cast<std::uint32_t>(v)); }

void get_bytes(std::istream& is, char* dst, std::size_t n) {
  is.read(dst, std::streamsize(n));
  if (std::size_t(is.gcount()) != n) throw TruncationError("unexpected end of data");
}

std::uint16_t get_u16(std::istream& is) {
  unsigned char b[2];
  get_bytes(is, reinterpret_cast<char*>(b), 2);
  return std::uint16_t(b[0] | (b[1] << 8));
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  get_bytes(is, reinterpret_cast<char*>(b), 4);
  return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
         (std::uint32_t(b[3]) << 24);
}

float get_f32(std::istream& is) { return std::bit_cast<float>(get_u32(is)); }

}  // namespace le

void write_rdtf(std::ostream& os, const Tensor& t) {
  if (t.rank() > 255) throw ShapeError("RDTF supports rank up to 255");
  os.write("RDTF", 4);
  const char hdr[4] = {char(kRdtfVersion), 0, char(t.rank()), 0};
  os.write(hdr, 4);
  for (auto e : t.shape()) {
    if (e > 0xffffffffu) throw ShapeError("extent exceeds u32");
    le::put_u32(os, std::uint32_t(e));
  }
  for (auto v : t.data()) le::put_f32(os, float(v));
  if (!os) throw Error("RDTF write failed");
}

Tensor read_rdtf(std::istream& is) {
  char magic[4];
  le::get_bytes(is, magic, 4);
  if (std::memcmp(magic, "RDTF", 4) != 0) throw FormatError("not an RDTF record (bad magic)");
  unsigned char hdr[4];
  le::get_bytes(is, reinterpret_cast<char*>(hdr), 4);
  if (hdr[0] != kRdtfVersion) throw FormatError("unsupported RDTF version " + std::to_string(hdr[0]));
  if (hdr[1] != 0) throw FormatError("unsupported RDTF dtype " + std::to_string(hdr[1]));
  if (hdr[2] == 0) throw FormatError("RDTF rank must be positive");
  if (hdr[3] != 0) throw FormatError("RDTF reserved byte must be zero");
  Shape shape(hdr[2]);
  for (auto& e : shape) {
    e = le::get_u32(is);
    if (e == 0) throw FormatError("RDTF extent of zero");
  }
  const std::size_t n = shape_size(shape);
  std::vector<char> raw(n * 4);
  le::get_bytes(is, raw.data(), raw.size());
  std::vector<real> data(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto* b = reinterpret_cast<const unsigned char*>(raw.data() + 4 * i);
    const std::uint32_t u = std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) |
                            (std::uint32_t(b[2]) << 16) | (std::uint32_t(b[3]) << 24);
    data[i] = real(std::bit_cast<float>(u));
  }
  return Tensor(std::move(shape), std::move(data));
}

void save_rdtf(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open " + path.string() + " for writing");
  write_rdtf(os, t);
}

Tensor load_rdtf(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw NotFoundError("cannot open " + path.string());
  return read_rdtf(is);
}

}  // namespace rdte
