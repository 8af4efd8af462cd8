// SPDX-License-Identifier: Apache-2.0
#include "dreamvox/binary_io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <limits>

#include "dreamvox/errors.hpp"

namespace dreamvox::io {
namespace {

template <class U>
void put_le(std::ostream& out, U v) {
  std::array<char, sizeof(U)> bytes{};
  for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xFFu);
  out.write(bytes.data(), bytes.size());
}

template <class U>
U get_le(std::istream& in) {
  std::array<unsigned char, sizeof(U)> bytes{};
  in.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  if (!in) throw FormatError("unexpected end of file");
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(bytes[i]) << (8 * i);
  return v;
}

}  // namespace

void write_magic(std::ostream& out, std::string_view magic) { out.write(magic.data(), static_cast<std::streamsize>(magic.size())); }
void write_u32(std::ostream& out, std::uint32_t v) { put_le(out, v); }
void write_u64(std::ostream& out, std::uint64_t v) { put_le(out, v); }
void write_f32(std::ostream& out, float v) { put_le(out, std::bit_cast<std::uint32_t>(v)); }
void write_f64(std::ostream& out, double v) { put_le(out, std::bit_cast<std::uint64_t>(v)); }

void write_f32_array(std::ostream& out, std::span<const float> values) {
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size_bytes()));
  } else {
    for (float v : values) write_f32(out, v);
  }
}

std::string read_magic(std::istream& in) {
  std::string magic(4, '\0');
  in.read(magic.data(), 4);
  if (!in) throw FormatError("file too short for header");
  return magic;
}

void expect_magic(std::istream& in, std::string_view magic) {
  const std::string got = read_magic(in);
  if (got != magic) throw FormatError("bad magic: expected '" + std::string(magic) + "'");
}

std::uint32_t read_u32(std::istream& in) { return get_le<std::uint32_t>(in); }
std::uint64_t read_u64(std::istream& in) { return get_le<std::uint64_t>(in); }
float read_f32(std::istream& in) { return std::bit_cast<float>(get_le<std::uint32_t>(in)); }
double read_f64(std::istream& in) { return std::bit_cast<double>(get_le<std::uint64_t>(in)); }

std::vector<float> read_f32_array(std::istream& in, std::size_t count) {
  if (count > std::numeric_limits<std::size_t>::max() / sizeof(float)) throw FormatError("array too large");
  std::vector<float> values(count);
  if constexpr (std::endian::native == std::endian::little) {
    in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(count * sizeof(float)));
    if (!in) throw FormatError("unexpected end of file in f32 array");
  } else {
    for (auto& v : values) v = read_f32(in);
  }
  return values;
}

void write_lattice(std::ostream& out, const Lattice& lattice) {
  for (int d : lattice.dims) write_u32(out, static_cast<std::uint32_t>(d));
  for (float o : lattice.origin) write_f32(out, o);
  write_f32(out, lattice.voxel_size);
}

Lattice read_lattice(std::istream& in) {
  Lattice lattice;
  for (auto& d : lattice.dims) {
    const std::uint32_t v = read_u32(in);
    if (v < 2 || v > (1u << 16)) throw FormatError("lattice dimension out of range");
    d = static_cast<int>(v);
  }
  for (auto& o : lattice.origin) o = read_f32(in);
  lattice.voxel_size = read_f32(in);
  try {
    validate_lattice(lattice);
  } catch (const ParameterError& e) {
    throw FormatError(e.what());
  }
  return lattice;
}

}  // namespace dreamvox::io
