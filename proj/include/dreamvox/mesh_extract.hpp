// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include "dreamvox/lattice.hpp"
#include "dreamvox/sdf_prior.hpp"
#include "dreamvox/voxel_field.hpp"

namespace dreamvox {

struct TriangleMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> triangles;

  bool empty() const { return triangles.empty(); }
};

/// Which side of the iso level counts as solid. SDFs are solid below, opacity grids above.
enum class InsideSide { below, above };

/// Marching cubes over the lattice nodes (cell corners are node centers).
/// Vertices shared between cells are emitted once.
TriangleMesh marching_cubes(const Lattice& lattice, std::span<const float> values, double iso,
                            InsideSide inside = InsideSide::below);
TriangleMesh marching_cubes(const SdfGrid& grid, double iso, InsideSide inside = InsideSide::below);

/// Resamples the field at `dims` voxel centers spanning the field's box and
/// maps density to opacity 1 − exp(−σ·s), s being the field's voxel size.
SdfGrid field_to_opacity_grid(const VoxelField& field, const std::array<int, 3>& dims);

struct EdgeAudit {
  std::size_t edges = 0;
  std::size_t boundary_edges = 0;     // used by one triangle
  std::size_t nonmanifold_edges = 0;  // used by three or more
  std::size_t degenerate_triangles = 0;

  bool watertight() const { return edges > 0 && boundary_edges == 0 && nonmanifold_edges == 0; }
};

EdgeAudit audit_edges(const TriangleMesh& mesh);

void write_obj(std::ostream& out, const TriangleMesh& mesh);
void save_obj(const std::filesystem::path& path, const TriangleMesh& mesh);

}  // namespace dreamvox
