// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>

#include "rdte/tensor.hpp"

namespace rdte {

/// RDTF record layout, all integers little-endian:
///   "RDTF" | version u8 = 1 | dtype u8 = 0 (f32) | rank u8 | reserved u8 = 0
///   | rank x u32 extents | product(extents) x f32 values, row-major.
inline constexpr std::uint8_t kRdtfVersion = 1;

void write_rdtf(std::ostream& os, const Tensor& t);
/// Throws FormatError on bad magic/version/dtype/header and TruncationError
/// when the stream ends early.
Tensor read_rdtf(std::istream& is);

void save_rdtf(const std::filesystem::path& path, const Tensor& t);
Tensor load_rdtf(const std::filesystem::path& path);

namespace le {
void put_u16(std::ostream& os, std::uint16_t v);
void put_u32(std::ostream& os, std::uint32_t v);
void put_f32(std::ostream& os, float v);
std::uint16_t get_u16(std::istream& is);
std::uint32_t get_u32(std::istream& is);
float get_f32(std::istream& is);
/// Reads exactly n bytes or throws TruncationError.
void get_bytes(std::istream& is, char* dst, std::size_t n);
}  // namespace le

}  // namespace rdte
