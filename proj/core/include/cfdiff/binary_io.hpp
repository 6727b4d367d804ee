// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace cfdiff::io {

/// Little-endian primitive writer over an ostream. Byte order is fixed
/// regardless of host so files are bit-identical everywhere.
class LeWriter {
 public:
  explicit LeWriter(std::ostream& out) : out_(out) {}

  void magic(std::string_view four_cc);
  void u8(std::uint8_t v);
  void u16(std::uint16_t v);
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f32(float v);
  void bytes(std::span<const std::uint8_t> data);
  void string(std::string_view s);  // u32 length + bytes
  void u32_array(std::span<const std::uint32_t> data);
  void u64_array(std::span<const std::uint64_t> data);
  void f32_array(std::span<const float> data);

 private:
  std::ostream& out_;
};

class LeReader {
 public:
  explicit LeReader(std::istream& in) : in_(in) {}

  /// Throws IoError if the next four bytes are not `four_cc`.
  void expect_magic(std::string_view four_cc);
  std::uint8_t u8();
  std::uint16_t u16();
  std::uint32_t u32();
  std::uint64_t u64();
  float f32();
  std::string string();
  void bytes(std::span<std::uint8_t> out);
  void u32_array(std::span<std::uint32_t> out);
  void u64_array(std::span<std::uint64_t> out);
  void f32_array(std::span<float> out);

 private:
  void raw(char* dst, std::size_t n);
  std::istream& in_;
};

/// Writes to `path` via a temporary sibling and rename, so readers never
/// observe a half-written file.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

std::string read_file(const std::filesystem::path& path);

/// FNV-1a 64-bit.
std::uint64_t fnv1a(std::string_view data);

}  // namespace cfdiff::io
