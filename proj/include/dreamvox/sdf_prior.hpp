// SPDX-License-Identifier: Apache-2.0
//
// Signed-distance shape priors: analytic primitives sampled on a lattice,
// CSG combination, the SDFG file format, and conversion of an SDF into a
// raw (pre-activation) density grid.
#pragma once

#include <filesystem>
#include <iosfwd>
#include <variant>
#include <vector>

#include "dreamvox/lattice.hpp"

namespace dreamvox {

/// Signed distance samples (world units, negative inside) on a lattice.
struct SdfGrid {
  Lattice lattice;
  std::vector<float> values;

  float at(int i, int j, int k) const { return values[lattice.index(i, j, k)]; }
};

struct SpherePrimitive {
  Vec3 center = Vec3::Zero();
  double radius = 0.5;
};

struct BoxPrimitive {
  Vec3 center = Vec3::Zero();
  Vec3 half_extents = Vec3::Constant(0.5);
};

/// Segment a-b swept by a ball of `radius`.
struct CapsulePrimitive {
  Vec3 a = Vec3(0, 0, -0.5);
  Vec3 b = Vec3(0, 0, 0.5);
  double radius = 0.25;
};

using PrimitiveSpec = std::variant<SpherePrimitive, BoxPrimitive, CapsulePrimitive>;

enum class CsgOp { union_, intersection, difference };

/// Exact signed distance of the primitive at a world point.
double primitive_distance(const PrimitiveSpec& spec, const Vec3& p);

void validate_primitive(const PrimitiveSpec& spec);

SdfGrid make_primitive_sdf(const PrimitiveSpec& spec, const Lattice& lattice);

/// Pointwise min (union), max (intersection) or max(a, -b) (difference).
SdfGrid csg_combine(const SdfGrid& a, const SdfGrid& b, CsgOp op);

/// Σ = sigmoid(-sdf/β)/β, raw = max(0, softplus⁻¹(Σ) − bias).
/// Activating with softplus(raw + bias) returns Σ wherever the clamp is
/// inactive, and the transparent baseline softplus(bias) where it is.
double sdf_to_raw_density(double sdf, double beta, double bias);

/// Raw density for every sample, in double precision.
std::vector<double> sdf_to_density(const SdfGrid& sdf, double beta, double bias);

void write_sdf(std::ostream& out, const SdfGrid& grid);
SdfGrid read_sdf(std::istream& in);
void save_sdf(const std::filesystem::path& path, const SdfGrid& grid);
SdfGrid load_sdf(const std::filesystem::path& path);

}  // namespace dreamvox
