// SPDX-License-Identifier: Apache-2.0
// Little-endian primitives shared by the SDFG / VFLD / ADAM / EDIF / EPRS formats.
#pragma once

#include <cstdint>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dreamvox/lattice.hpp"

namespace dreamvox::io {

void write_magic(std::ostream& out, std::string_view magic);
void write_u32(std::ostream& out, std::uint32_t v);
void write_u64(std::ostream& out, std::uint64_t v);
void write_f32(std::ostream& out, float v);
void write_f64(std::ostream& out, double v);
void write_f32_array(std::ostream& out, std::span<const float> values);

/// Reads 4 bytes and throws FormatError unless they equal `magic`.
void expect_magic(std::istream& in, std::string_view magic);
std::string read_magic(std::istream& in);
std::uint32_t read_u32(std::istream& in);
std::uint64_t read_u64(std::istream& in);
float read_f32(std::istream& in);
double read_f64(std::istream& in);
std::vector<float> read_f32_array(std::istream& in, std::size_t count);

/// dims (3 x u32), origin (3 x f32), voxel_size (f32).
void write_lattice(std::ostream& out, const Lattice& lattice);
Lattice read_lattice(std::istream& in);

}  // namespace dreamvox::io
