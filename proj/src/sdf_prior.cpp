// SPDX-License-Identifier: Apache-2.0
#include "dreamvox/sdf_prior.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "dreamvox/activations.hpp"
#include "dreamvox/binary_io.hpp"
#include "dreamvox/errors.hpp"

namespace dreamvox {
namespace {

constexpr char kSdfMagic[] = "SDFG";
constexpr std::uint32_t kSdfVersion = 1;

struct DistanceVisitor {
  const Vec3& p;

  double operator()(const SpherePrimitive& s) const { return (p - s.center).norm() - s.radius; }

  double operator()(const BoxPrimitive& b) const {
    const Vec3 q = (p - b.center).cwiseAbs() - b.half_extents;
    const double outside = q.cwiseMax(0.0).norm();
    const double inside = std::min(q.maxCoeff(), 0.0);
    return outside + inside;
  }

  double operator()(const CapsulePrimitive& c) const {
    const Vec3 ab = c.b - c.a;
    const double len2 = ab.squaredNorm();
    const double t = len2 > 0 ? std::clamp((p - c.a).dot(ab) / len2, 0.0, 1.0) : 0.0;
    return (p - (c.a + t * ab)).norm() - c.radius;
  }
};

}  // namespace

void validate_primitive(const PrimitiveSpec& spec) {
  std::visit(
      [](const auto& prim) {
        using T = std::decay_t<decltype(prim)>;
        if constexpr (std::is_same_v<T, BoxPrimitive>) {
          if (!(prim.half_extents.minCoeff() > 0)) throw ParameterError("box half-extents must be positive");
        } else {
          if (!(prim.radius > 0)) throw ParameterError("primitive radius must be positive");
        }
      },
      spec);
}

double primitive_distance(const PrimitiveSpec& spec, const Vec3& p) { return std::visit(DistanceVisitor{p}, spec); }

SdfGrid make_primitive_sdf(const PrimitiveSpec& spec, const Lattice& lattice) {
  validate_lattice(lattice);
  validate_primitive(spec);
  SdfGrid grid{lattice, std::vector<float>(lattice.size())};
  for (int k = 0; k < lattice.dims[2]; ++k)
    for (int j = 0; j < lattice.dims[1]; ++j)
      for (int i = 0; i < lattice.dims[0]; ++i)
        grid.values[lattice.index(i, j, k)] = static_cast<float>(primitive_distance(spec, lattice.node_position(i, j, k)));
  return grid;
}

SdfGrid csg_combine(const SdfGrid& a, const SdfGrid& b, CsgOp op) {
  if (!(a.lattice == b.lattice)) throw ParameterError("csg_combine: operands live on different lattices");
  SdfGrid out{a.lattice, std::vector<float>(a.values.size())};
  for (std::size_t n = 0; n < a.values.size(); ++n) {
    switch (op) {
      case CsgOp::union_: out.values[n] = std::min(a.values[n], b.values[n]); break;
      case CsgOp::intersection: out.values[n] = std::max(a.values[n], b.values[n]); break;
      case CsgOp::difference: out.values[n] = std::max(a.values[n], -b.values[n]); break;
    }
  }
  return out;
}

double sdf_to_raw_density(double sdf, double beta, double bias) {
  if (!(beta > 0)) throw ParameterError("beta must be positive");
  const double sigma = sigmoid(-sdf / beta) / beta;
  // softplus_inverse(0) = -inf, so an underflowed sigma clamps to 0 here.
  const double raw = softplus_inverse(sigma) - bias;
  return raw > 0.0 ? raw : 0.0;
}

std::vector<double> sdf_to_density(const SdfGrid& sdf, double beta, double bias) {
  if (!(beta > 0)) throw ParameterError("beta must be positive");
  std::vector<double> raw(sdf.values.size());
  std::transform(sdf.values.begin(), sdf.values.end(), raw.begin(),
                 [&](float v) { return sdf_to_raw_density(v, beta, bias); });
  return raw;
}

void write_sdf(std::ostream& out, const SdfGrid& grid) {
  io::write_magic(out, kSdfMagic);
  io::write_u32(out, kSdfVersion);
  io::write_lattice(out, grid.lattice);
  io::write_f32_array(out, grid.values);
}

SdfGrid read_sdf(std::istream& in) {
  io::expect_magic(in, kSdfMagic);
  const std::uint32_t version = io::read_u32(in);
  if (version != kSdfVersion) throw FormatError("unsupported SDFG version " + std::to_string(version));
  SdfGrid grid;
  grid.lattice = io::read_lattice(in);
  grid.values = io::read_f32_array(in, grid.lattice.size());
  for (float v : grid.values) {
    if (!std::isfinite(v)) throw FormatError("SDFG contains non-finite values");
  }
  return grid;
}

void save_sdf(const std::filesystem::path& path, const SdfGrid& grid) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParameterError("cannot open " + path.string() + " for writing");
  write_sdf(out, grid);
  if (!out) throw FormatError("failed writing " + path.string());
}

SdfGrid load_sdf(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParameterError("cannot open " + path.string());
  return read_sdf(in);
}

}  // namespace dreamvox
