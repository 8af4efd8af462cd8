// SPDX-License-Identifier: Apache-2.0
//
// The optimizable scene: a raw (pre-activation) density grid with a shared
// softplus shift, plus a shallow color MLP over positional-encoded positions.
#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include <Eigen/Core>

#include "dreamvox/lattice.hpp"
#include "dreamvox/mlp.hpp"
#include "dreamvox/sdf_prior.hpp"

namespace dreamvox {

struct ColorNetConfig {
  int encoding_levels = 4;
  std::vector<int> hidden_widths{64, 64};
};

struct VoxelField {
  Lattice lattice;
  std::vector<float> density;  // raw values, one per lattice sample
  MlpParams color_mlp;
  double bias = 0.0;
  int encoding_levels = 4;
  std::uint64_t seed = 0;

  bool operator==(const VoxelField&) const = default;
};

inline int encoding_width(int levels) { return 3 + 6 * levels; }

/// x followed by sin(2^k π x), cos(2^k π x) for k < levels (componentwise).
Eigen::VectorXd positional_encoding(const Vec3& x, int levels);
void positional_encoding_into(const Vec3& x, int levels, double* out);

/// Maps the lattice bounding box onto [-1, 1]^3.
Vec3 normalize_to_box(const Lattice& lattice, const Vec3& x);

/// Zero-padded trilinear interpolation of the raw grid.
double query_raw_density(const VoxelField& field, const Vec3& x);
/// softplus(raw + bias)
double query_density(const VoxelField& field, const Vec3& x);
/// dσ/dx of query_density (one-sided inside a cell; undefined exactly on cell faces).
Vec3 density_spatial_gradient(const VoxelField& field, const Vec3& x);
Eigen::Vector3d query_color(const VoxelField& field, const Vec3& x);

/// Shift b such that a voxel-length segment of zero raw density has opacity alpha_init:
/// b = ln((1 − alpha_init)^(−1/s) − 1).
double transparent_bias(double alpha_init, double step_length);

VoxelField init_transparent(const Lattice& lattice, double alpha_init, double step_length,
                            const ColorNetConfig& config, std::uint64_t seed);

VoxelField init_from_prior(const SdfGrid& sdf, double beta, double alpha_init, const ColorNetConfig& config,
                           std::uint64_t seed);

void write_field(std::ostream& out, const VoxelField& field);
VoxelField read_field(std::istream& in);
void save_field(const std::filesystem::path& path, const VoxelField& field);
VoxelField load_field(const std::filesystem::path& path);

}  // namespace dreamvox
