// SPDX-License-Identifier: Apache-2.0
#include "dreamvox/lattice.hpp"

#include <cmath>
#include <string>

#include "dreamvox/errors.hpp"

namespace dreamvox {

void validate_lattice(const Lattice& lattice) {
  for (int d : lattice.dims) {
    if (d < 2) throw ParameterError("lattice dims must be >= 2 per axis, got " + std::to_string(d));
  }
  if (!(lattice.voxel_size > 0.f) || !std::isfinite(lattice.voxel_size)) {
    throw ParameterError("voxel_size must be positive and finite");
  }
  for (float o : lattice.origin) {
    if (!std::isfinite(o)) throw ParameterError("lattice origin must be finite");
  }
}

Lattice centered_cube_lattice(int n, double extent, const Vec3& center) {
  if (n < 2) throw ParameterError("lattice resolution must be >= 2");
  if (!(extent > 0.0)) throw ParameterError("lattice extent must be positive");
  Lattice lattice;
  lattice.dims = {n, n, n};
  lattice.voxel_size = static_cast<float>(extent / n);
  const double half = 0.5 * n * double(lattice.voxel_size);
  for (int a = 0; a < 3; ++a) lattice.origin[a] = static_cast<float>(center[a] - half);
  return lattice;
}

TrilinearStencil trilinear_stencil(const Lattice& lattice, const Vec3& x) {
  TrilinearStencil st;
  const Vec3 u = lattice.to_node_coords(x);
  std::array<int, 3> base{};
  std::array<double, 3> frac{};
  for (int a = 0; a < 3; ++a) {
    const double f = std::floor(u[a]);
    base[a] = static_cast<int>(f);
    frac[a] = u[a] - f;
  }
  for (int c = 0; c < 8; ++c) {
    const int di = c & 1, dj = (c >> 1) & 1, dk = (c >> 2) & 1;
    const int i = base[0] + di, j = base[1] + dj, k = base[2] + dk;
    st.weight[c] = (di ? frac[0] : 1.0 - frac[0]) * (dj ? frac[1] : 1.0 - frac[1]) * (dk ? frac[2] : 1.0 - frac[2]);
    const bool inside = i >= 0 && j >= 0 && k >= 0 && i < lattice.dims[0] && j < lattice.dims[1] && k < lattice.dims[2];
    st.index[c] = inside ? lattice.index(i, j, k) : TrilinearStencil::npos;
  }
  return st;
}

}  // namespace dreamvox
