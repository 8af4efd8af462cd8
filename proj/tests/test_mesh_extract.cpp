// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <sstream>

#include "dreamvox/errors.hpp"
#include "dreamvox/mesh_extract.hpp"
#include "support.hpp"

using namespace dreamvox;

TEST_CASE("uniform grid gives an empty mesh") {
  SdfGrid g{centered_cube_lattice(8, 2.0), std::vector<float>(512, 1.f)};
  CHECK(marching_cubes(g, 0.0).empty());
  CHECK(marching_cubes(g, 0.0).vertices.empty());
  CHECK(marching_cubes(g, 2.0).empty());  // all below iso is also empty
}

TEST_CASE("sphere at 64^3: radial error and watertightness") {
  const double r = 0.6;
  const SdfGrid g = testing::sphere_grid(64, r);
  const TriangleMesh mesh = marching_cubes(g, 0.0);
  REQUIRE(!mesh.empty());
  const double tol = g.lattice.voxel_size * std::sqrt(3.0);
  double worst = 0;
  for (const Vec3& v : mesh.vertices) worst = std::max(worst, std::abs(v.norm() - r));
  CHECK(worst < tol);
  const EdgeAudit audit = audit_edges(mesh);
  CHECK(audit.watertight());
  CHECK(audit.degenerate_triangles == 0);
  // Closed genus-0 surface: V − E + F = 2.
  CHECK(long(mesh.vertices.size()) - long(audit.edges) + long(mesh.triangles.size()) == 2);
}

TEST_CASE("box and csg shapes are watertight") {
  const Lattice lat = centered_cube_lattice(40, 2.0);
  const SdfGrid box = make_primitive_sdf(BoxPrimitive{Vec3(0.05, 0, 0), Vec3(0.5, 0.3, 0.4)}, lat);
  const SdfGrid cap = make_primitive_sdf(CapsulePrimitive{Vec3(-0.5, 0, 0), Vec3(0.5, 0.2, 0), 0.2}, lat);
  CHECK(audit_edges(marching_cubes(box, 0.0)).watertight());
  CHECK(audit_edges(marching_cubes(csg_combine(box, cap, CsgOp::difference), 0.0)).watertight());
}

TEST_CASE("translation shifts vertices by the origin offset") {
  const SdfGrid g = testing::sphere_grid(20, 0.5);
  SdfGrid moved = g;
  const Vec3 offset(0.25, -1.5, 3.0);  // exactly representable in float
  for (int a = 0; a < 3; ++a) moved.lattice.origin[a] += static_cast<float>(offset[a]);
  const TriangleMesh a = marching_cubes(g, 0.0), b = marching_cubes(moved, 0.0);
  REQUIRE(a.vertices.size() == b.vertices.size());
  CHECK(a.triangles == b.triangles);
  const Vec3 realized = moved.lattice.origin_vec() - g.lattice.origin_vec();
  CHECK((realized - offset).norm() == 0.0);
  for (std::size_t n = 0; n < a.vertices.size(); ++n) CHECK((b.vertices[n] - a.vertices[n] - offset).norm() < 1e-12);
}

TEST_CASE("linear field vertices lie on the plane") {
  const Lattice lat = centered_cube_lattice(12, 2.0);
  const Vec3 normal = Vec3(0.3, -0.5, 0.8).normalized();
  const double d = 0.1;
  SdfGrid g{lat, std::vector<float>(lat.size())};
  for (int k = 0; k < 12; ++k)
    for (int j = 0; j < 12; ++j)
      for (int i = 0; i < 12; ++i) g.values[lat.index(i, j, k)] = static_cast<float>(normal.dot(lat.node_position(i, j, k)) - d);
  const TriangleMesh mesh = marching_cubes(g, 0.0);
  REQUIRE(!mesh.empty());
  for (const Vec3& v : mesh.vertices) CHECK(std::abs(normal.dot(v) - d) < 1e-6);
  const EdgeAudit audit = audit_edges(mesh);
  CHECK(audit.nonmanifold_edges == 0);
  CHECK(audit.boundary_edges > 0);  // an open plane patch clipped by the box
}

TEST_CASE("extraction is deterministic and rejects bad grids") {
  const SdfGrid g = testing::sphere_grid(24, 0.4);
  const TriangleMesh a = marching_cubes(g, 0.0), b = marching_cubes(g, 0.0);
  CHECK(a.vertices == b.vertices);
  CHECK(a.triangles == b.triangles);
  SdfGrid nan = g;
  nan.values[3] = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(marching_cubes(nan, 0.0), ParameterError);
  SdfGrid flat{centered_cube_lattice(4, 1.0), std::vector<float>(64, 1.f)};
  flat.lattice.dims = {4, 16, 1};
  CHECK_THROWS_AS(marching_cubes(flat, 0.0), ParameterError);
  CHECK_THROWS_AS(marching_cubes(g.lattice, std::vector<float>(10), 0.0), ParameterError);
}

TEST_CASE("opacity grids: transparent, bounded, nested, close to the prior surface") {
  const Lattice lat = centered_cube_lattice(32, 2.0);
  const VoxelField clear = init_transparent(lat, 1e-6, lat.voxel_size, {}, 1);
  for (float v : field_to_opacity_grid(clear, {16, 16, 16}).values) CHECK(std::abs(v - 1e-6) < 1e-9);

  const VoxelField rnd = testing::random_field(10, 2);
  for (float v : field_to_opacity_grid(rnd, {9, 11, 13}).values) {
    CHECK(v >= 0.f);
    CHECK(v <= 1.f);
  }
  CHECK_THROWS_AS(field_to_opacity_grid(rnd, {1, 4, 4}), ParameterError);

  const double r = 0.55;
  const SdfGrid sdf = make_primitive_sdf(SpherePrimitive{Vec3::Zero(), r}, lat);
  const VoxelField prior = init_from_prior(sdf, 0.05, 1e-6, {}, 3);
  const SdfGrid opacity = field_to_opacity_grid(prior, {64, 64, 64});
  const TriangleMesh surface = marching_cubes(opacity, 0.5, InsideSide::above);
  REQUIRE(!surface.empty());
  CHECK(audit_edges(surface).watertight());
  double mean = 0;
  for (const Vec3& v : surface.vertices) mean += std::abs(v.norm() - r) / double(surface.vertices.size());
  CHECK(mean < 2 * lat.voxel_size);

  // Lower iso sits further out: the 0.25 surface encloses the 0.5 surface.
  const TriangleMesh outer = marching_cubes(opacity, 0.25, InsideSide::above);
  auto bbox = [](const TriangleMesh& m) {
    Vec3 lo = Vec3::Constant(1e9), hi = Vec3::Constant(-1e9);
    for (const Vec3& v : m.vertices) {
      lo = lo.cwiseMin(v);
      hi = hi.cwiseMax(v);
    }
    return std::pair{lo, hi};
  };
  const auto [ilo, ihi] = bbox(surface);
  const auto [olo, ohi] = bbox(outer);
  CHECK((olo.array() <= ilo.array()).all());
  CHECK((ohi.array() >= ihi.array()).all());
}

TEST_CASE("OBJ output format") {
  TriangleMesh m;
  m.vertices = {Vec3(0, 0, 0), Vec3(1.0 / 3.0, 0, 0), Vec3(0, 1234567.0, -0.5)};
  m.triangles = {{0, 1, 2}};
  std::ostringstream out;
  write_obj(out, m);
  CHECK(out.str() == "v 0 0 0\nv 0.333333 0 0\nv 0 1.23457e+06 -0.5\nf 1 2 3\n");
  TriangleMesh bad = m;
  bad.triangles.push_back({0, 1, 5});
  CHECK_THROWS_AS(audit_edges(bad), ParameterError);
}
