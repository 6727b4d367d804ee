// SPDX-License-Identifier: Apache-2.0
#include "cfdiff/binary_io.hpp"

#include <array>
#include <bit>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "cfdiff/errors.hpp"

namespace cfdiff::io {

namespace {

template <class U>
void put_le(std::ostream& out, U v) {
  std::array<char, sizeof(U)> buf{};
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    buf[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  }
  out.write(buf.data(), buf.size());
}

template <class U>
U get_le(const std::array<unsigned char, sizeof(U)>& buf) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf[i]) << (8 * i);
  return v;
}

}  // namespace

void LeWriter::magic(std::string_view four_cc) { out_.write(four_cc.data(), 4); }
void LeWriter::u8(std::uint8_t v) { put_le(out_, v); }
void LeWriter::u16(std::uint16_t v) { put_le(out_, v); }
void LeWriter::u32(std::uint32_t v) { put_le(out_, v); }
void LeWriter::u64(std::uint64_t v) { put_le(out_, v); }
void LeWriter::f32(float v) { put_le(out_, std::bit_cast<std::uint32_t>(v)); }

void LeWriter::bytes(std::span<const std::uint8_t> data) {
  out_.write(reinterpret_cast<const char*>(data.data()),
             static_cast<std::streamsize>(data.size()));
}

void LeWriter::string(std::string_view s) {
  u32(static_cast<std::uint32_t>(s.size()));
  out_.write(s.data(), static_cast<std::streamsize>(s.size()));
}

void LeWriter::u32_array(std::span<const std::uint32_t> data) {
  for (auto v : data) u32(v);
}
void LeWriter::u64_array(std::span<const std::uint64_t> data) {
  for (auto v : data) u64(v);
}
void LeWriter::f32_array(std::span<const float> data) {
  for (auto v : data) f32(v);
}

void LeReader::raw(char* dst, std::size_t n) {
  in_.read(dst, static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in_.gcount()) != n) {
    throw IoError("unexpected end of binary file");
  }
}

void LeReader::expect_magic(std::string_view four_cc) {
  std::array<char, 4> buf{};
  raw(buf.data(), 4);
  if (std::string_view(buf.data(), 4) != four_cc) {
    throw IoError("bad magic: expected '" + std::string(four_cc) + "'");
  }
}

std::uint8_t LeReader::u8() {
  std::array<unsigned char, 1> b{};
  raw(reinterpret_cast<char*>(b.data()), 1);
  return b[0];
}
std::uint16_t LeReader::u16() {
  std::array<unsigned char, 2> b{};
  raw(reinterpret_cast<char*>(b.data()), 2);
  return get_le<std::uint16_t>(b);
}
std::uint32_t LeReader::u32() {
  std::array<unsigned char, 4> b{};
  raw(reinterpret_cast<char*>(b.data()), 4);
  return get_le<std::uint32_t>(b);
}
std::uint64_t LeReader::u64() {
  std::array<unsigned char, 8> b{};
  raw(reinterpret_cast<char*>(b.data()), 8);
  return get_le<std::uint64_t>(b);
}
float LeReader::f32() { return std::bit_cast<float>(u32()); }

std::string LeReader::string() {
  const auto n = u32();
  std::string s(n, '\0');
  raw(s.data(), n);
  return s;
}

void LeReader::bytes(std::span<std::uint8_t> out) {
  raw(reinterpret_cast<char*>(out.data()), out.size());
}
void LeReader::u32_array(std::span<std::uint32_t> out) {
  for (auto& v : out) v = u32();
}
void LeReader::u64_array(std::span<std::uint64_t> out) {
  for (auto& v : out) v = u64();
}
void LeReader::f32_array(std::span<float> out) {
  for (auto& v : out) v = f32();
}

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw IoError("write failed for '" + tmp.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename to '" + path.string() + "': " + ec.message());
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::uint64_t fnv1a(std::string_view data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace cfdiff::io
