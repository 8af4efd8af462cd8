// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>

#include <Eigen/Core>

namespace dreamvox {

using Vec3 = Eigen::Vector3d;

/// Regular cell-centered lattice. Sample (i, j, k) sits at
/// origin + (i + 1/2, j + 1/2, k + 1/2) * voxel_size and is stored at
/// index i + nx * (j + ny * k).
///
/// origin and voxel_size are kept in single precision because that is what
/// the on-disk formats carry; a lattice read back from disk compares equal.
struct Lattice {
  std::array<int, 3> dims{2, 2, 2};
  std::array<float, 3> origin{0.f, 0.f, 0.f};
  float voxel_size = 1.f;

  std::size_t size() const {
    return static_cast<std::size_t>(dims[0]) * static_cast<std::size_t>(dims[1]) *
           static_cast<std::size_t>(dims[2]);
  }

  std::size_t index(int i, int j, int k) const {
    return static_cast<std::size_t>(i) +
           static_cast<std::size_t>(dims[0]) *
               (static_cast<std::size_t>(j) + static_cast<std::size_t>(dims[1]) * static_cast<std::size_t>(k));
  }

  Vec3 origin_vec() const { return {origin[0], origin[1], origin[2]}; }

  Vec3 node_position(int i, int j, int k) const {
    const double s = voxel_size;
    return origin_vec() + Vec3((i + 0.5) * s, (j + 0.5) * s, (k + 0.5) * s);
  }

  /// World-space extent of the lattice box (dims * voxel_size).
  Vec3 extent() const {
    const double s = voxel_size;
    return {dims[0] * s, dims[1] * s, dims[2] * s};
  }

  Vec3 box_center() const { return origin_vec() + 0.5 * extent(); }

  /// Continuous node coordinates: integer values land exactly on samples.
  Vec3 to_node_coords(const Vec3& x) const { return (x - origin_vec()) / double(voxel_size) - Vec3::Constant(0.5); }

  bool operator==(const Lattice&) const = default;
};

/// Throws ParameterError unless every dim is >= 2 and voxel_size is positive and finite.
void validate_lattice(const Lattice& lattice);

/// Cubic lattice of n^3 samples centered on `center` spanning `extent` world units per side.
Lattice centered_cube_lattice(int n, double extent, const Vec3& center = Vec3::Zero());

/// Weights and flat node indices of zero-padded trilinear interpolation.
/// Nodes outside the lattice contribute weight but no index (index = npos);
/// callers treat their value as zero.
struct TrilinearStencil {
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);
  std::array<std::size_t, 8> index{};
  std::array<double, 8> weight{};
};

TrilinearStencil trilinear_stencil(const Lattice& lattice, const Vec3& x);

}  // namespace dreamvox
