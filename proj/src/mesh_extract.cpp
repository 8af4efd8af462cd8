// SPDX-License-Identifier: Apache-2.0
#include "dreamvox/mesh_extract.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <unordered_map>

#include "dreamvox/errors.hpp"
#include "dreamvox/losses.hpp"
#include "mc_tables.hpp"

namespace dreamvox {
namespace {

constexpr std::array<std::array<int, 3>, 8> kCorner{{
    {0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0}, {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1},
}};
constexpr std::array<std::array<int, 2>, 12> kEdgeCorners{{
    {0, 1}, {1, 2}, {2, 3}, {3, 0}, {4, 5}, {5, 6}, {6, 7}, {7, 4}, {0, 4}, {1, 5}, {2, 6}, {3, 7},
}};

}  // namespace

TriangleMesh marching_cubes(const Lattice& lattice, std::span<const float> values, double iso, InsideSide inside) {
  validate_lattice(lattice);
  const auto [nx, ny, nz] = lattice.dims;
  if (nx < 2 || ny < 2 || nz < 2) throw ParameterError("marching cubes needs at least 2 samples per axis");
  if (values.size() != lattice.size()) throw ParameterError("value count does not match the lattice");
  if (!std::isfinite(iso)) throw ParameterError("iso level must be finite");
  for (float v : values)
    if (!std::isfinite(v)) throw ParameterError("grid contains non-finite values");

  // Solid-above grids are handled by negating values and iso; edge interpolation is unchanged.
  const double sign = inside == InsideSide::below ? 1.0 : -1.0;
  const double level = sign * iso;
  auto value = [&](int i, int j, int k) { return sign * static_cast<double>(values[lattice.index(i, j, k)]); };

  const Vec3 origin = lattice.origin_vec();
  const double s = lattice.voxel_size;
  TriangleMesh mesh;
  std::unordered_map<std::uint64_t, int> edge_vertex;

  auto vertex_on_edge = [&](std::array<int, 3> a, std::array<int, 3> b) {
    if (b < a) std::swap(a, b);  // canonical order: the lower node first
    int axis = 0;
    while (a[axis] == b[axis]) ++axis;
    const std::uint64_t id = static_cast<std::uint64_t>(lattice.index(a[0], a[1], a[2])) * 3 + axis;
    auto [it, inserted] = edge_vertex.try_emplace(id, static_cast<int>(mesh.vertices.size()));
    if (inserted) {
      const double va = value(a[0], a[1], a[2]), vb = value(b[0], b[1], b[2]);
      const double t = (level - va) / (vb - va);
      Vec3 local(a[0] + 0.5, a[1] + 0.5, a[2] + 0.5);
      local[axis] += t;
      mesh.vertices.push_back(origin + local * s);
    }
    return it->second;
  };

  for (int k = 0; k + 1 < nz; ++k) {
    for (int j = 0; j + 1 < ny; ++j) {
      for (int i = 0; i + 1 < nx; ++i) {
        int cube = 0;
        for (int c = 0; c < 8; ++c)
          if (value(i + kCorner[c][0], j + kCorner[c][1], k + kCorner[c][2]) < level) cube |= 1 << c;
        if (mc_tables::kEdgeTable[cube] == 0) continue;
        std::array<int, 12> vid{};
        for (int e = 0; e < 12; ++e) {
          if (!(mc_tables::kEdgeTable[cube] & (1 << e))) continue;
          const auto& c0 = kCorner[kEdgeCorners[e][0]];
          const auto& c1 = kCorner[kEdgeCorners[e][1]];
          vid[e] = vertex_on_edge({i + c0[0], j + c0[1], k + c0[2]}, {i + c1[0], j + c1[1], k + c1[2]});
        }
        const auto& tri = mc_tables::kTriTable[cube];
        for (int t = 0; tri[t] != -1; t += 3) {
          if (inside == InsideSide::below) {
            mesh.triangles.push_back({vid[tri[t]], vid[tri[t + 1]], vid[tri[t + 2]]});
          } else {
            mesh.triangles.push_back({vid[tri[t]], vid[tri[t + 2]], vid[tri[t + 1]]});
          }
        }
      }
    }
  }
  return mesh;
}

TriangleMesh marching_cubes(const SdfGrid& grid, double iso, InsideSide inside) {
  return marching_cubes(grid.lattice, grid.values, iso, inside);
}

SdfGrid field_to_opacity_grid(const VoxelField& field, const std::array<int, 3>& dims) {
  for (int d : dims)
    if (d < 2) throw ParameterError("opacity grid needs at least 2 samples per axis");
  const Vec3 extent = field.lattice.extent();
  double s = 0.0;
  for (int a = 0; a < 3; ++a) s = std::max(s, extent[a] / dims[a]);
  const Vec3 center = field.lattice.box_center();
  SdfGrid grid;
  grid.lattice.dims = dims;
  grid.lattice.voxel_size = static_cast<float>(s);
  for (int a = 0; a < 3; ++a) grid.lattice.origin[a] = static_cast<float>(center[a] - 0.5 * dims[a] * s);
  grid.values.resize(grid.lattice.size());
  const double step = field.lattice.voxel_size;
  for (int k = 0; k < dims[2]; ++k)
    for (int j = 0; j < dims[1]; ++j)
      for (int i = 0; i < dims[0]; ++i) {
        const double raw = query_raw_density(field, grid.lattice.node_position(i, j, k));
        grid.values[grid.lattice.index(i, j, k)] = static_cast<float>(voxel_opacity(raw, field.bias, step));
      }
  return grid;
}

EdgeAudit audit_edges(const TriangleMesh& mesh) {
  std::map<std::pair<int, int>, int> uses;
  EdgeAudit audit;
  const int n = static_cast<int>(mesh.vertices.size());
  for (const auto& t : mesh.triangles) {
    for (int v : t)
      if (v < 0 || v >= n) throw ParameterError("triangle index out of range");
    if (t[0] == t[1] || t[1] == t[2] || t[0] == t[2]) ++audit.degenerate_triangles;
    for (int e = 0; e < 3; ++e) {
      const int a = t[e], b = t[(e + 1) % 3];
      ++uses[{std::min(a, b), std::max(a, b)}];
    }
  }
  audit.edges = uses.size();
  for (const auto& [edge, count] : uses) {
    if (count == 1) ++audit.boundary_edges;
    if (count > 2) ++audit.nonmanifold_edges;
  }
  return audit;
}

void write_obj(std::ostream& out, const TriangleMesh& mesh) {
  char line[128];
  for (const auto& v : mesh.vertices) {
    std::snprintf(line, sizeof line, "v %.6g %.6g %.6g\n", v.x(), v.y(), v.z());
    out << line;
  }
  for (const auto& t : mesh.triangles) {
    std::snprintf(line, sizeof line, "f %d %d %d\n", t[0] + 1, t[1] + 1, t[2] + 1);
    out << line;
  }
}

void save_obj(const std::filesystem::path& path, const TriangleMesh& mesh) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParameterError("cannot open " + path.string() + " for writing");
  write_obj(out, mesh);
  if (!out) throw FormatError("failed writing " + path.string());
}

}  // namespace dreamvox
