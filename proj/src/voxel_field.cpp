// SPDX-License-Identifier: Apache-2.0
#include "dreamvox/voxel_field.hpp"

#include <array>
#include <cmath>
#include <fstream>
#include <numbers>

#include "dreamvox/activations.hpp"
#include "dreamvox/binary_io.hpp"
#include "dreamvox/errors.hpp"

namespace dreamvox {
namespace {

constexpr char kFieldMagic[] = "VFLD";
constexpr std::uint32_t kFieldVersion = 1;

MlpParams make_color_mlp(const ColorNetConfig& config, std::uint64_t seed) {
  if (config.encoding_levels < 0) throw ParameterError("encoding_levels must be >= 0");
  std::vector<int> widths{encoding_width(config.encoding_levels)};
  widths.insert(widths.end(), config.hidden_widths.begin(), config.hidden_widths.end());
  widths.push_back(3);
  Rng rng = Rng(seed).split("color_mlp_init");
  return make_mlp(widths, OutputActivation::sigmoid, rng);
}

}  // namespace

void positional_encoding_into(const Vec3& x, int levels, double* out) {
  out[0] = x[0];
  out[1] = x[1];
  out[2] = x[2];
  double freq = std::numbers::pi;
  for (int k = 0; k < levels; ++k, freq *= 2.0) {
    double* row = out + 3 + 6 * k;
    for (int a = 0; a < 3; ++a) {
      row[a] = std::sin(freq * x[a]);
      row[3 + a] = std::cos(freq * x[a]);
    }
  }
}

Eigen::VectorXd positional_encoding(const Vec3& x, int levels) {
  if (levels < 0) throw ParameterError("encoding levels must be >= 0");
  Eigen::VectorXd out(encoding_width(levels));
  positional_encoding_into(x, levels, out.data());
  return out;
}

Vec3 normalize_to_box(const Lattice& lattice, const Vec3& x) {
  return 2.0 * (x - lattice.origin_vec()).cwiseQuotient(lattice.extent()) - Vec3::Ones();
}

double query_raw_density(const VoxelField& field, const Vec3& x) {
  const TrilinearStencil st = trilinear_stencil(field.lattice, x);
  double raw = 0.0;
  for (int c = 0; c < 8; ++c) {
    if (st.index[c] != TrilinearStencil::npos) raw += st.weight[c] * field.density[st.index[c]];
  }
  return raw;
}

double query_density(const VoxelField& field, const Vec3& x) { return softplus(query_raw_density(field, x) + field.bias); }

Vec3 density_spatial_gradient(const VoxelField& field, const Vec3& x) {
  const Lattice& lat = field.lattice;
  const Vec3 u = lat.to_node_coords(x);
  std::array<int, 3> base{};
  std::array<double, 3> frac{};
  for (int a = 0; a < 3; ++a) {
    base[a] = static_cast<int>(std::floor(u[a]));
    frac[a] = u[a] - base[a];
  }
  Vec3 draw = Vec3::Zero();
  for (int c = 0; c < 8; ++c) {
    const std::array<int, 3> d{c & 1, (c >> 1) & 1, (c >> 2) & 1};
    const int i = base[0] + d[0], j = base[1] + d[1], k = base[2] + d[2];
    if (i < 0 || j < 0 || k < 0 || i >= lat.dims[0] || j >= lat.dims[1] || k >= lat.dims[2]) continue;
    const double v = field.density[lat.index(i, j, k)];
    std::array<double, 3> w{}, dw{};
    for (int a = 0; a < 3; ++a) {
      w[a] = d[a] ? frac[a] : 1.0 - frac[a];
      dw[a] = d[a] ? 1.0 : -1.0;
    }
    draw += v * Vec3(dw[0] * w[1] * w[2], w[0] * dw[1] * w[2], w[0] * w[1] * dw[2]);
  }
  return sigmoid(query_raw_density(field, x) + field.bias) * draw / static_cast<double>(lat.voxel_size);
}

Eigen::Vector3d query_color(const VoxelField& field, const Vec3& x) {
  Eigen::MatrixXd enc(encoding_width(field.encoding_levels), 1);
  positional_encoding_into(normalize_to_box(field.lattice, x), field.encoding_levels, enc.data());
  return MlpEvaluator(field.color_mlp).forward(enc).col(0);
}

double transparent_bias(double alpha_init, double step_length) {
  if (!(alpha_init > 0.0 && alpha_init < 1.0)) throw ParameterError("alpha_init must lie in (0, 1)");
  if (!(step_length > 0.0)) throw ParameterError("step length must be positive");
  // (1 - a)^(-1/s) - 1 evaluated without cancellation.
  return std::log(std::expm1(-std::log1p(-alpha_init) / step_length));
}

VoxelField init_transparent(const Lattice& lattice, double alpha_init, double step_length,
                            const ColorNetConfig& config, std::uint64_t seed) {
  validate_lattice(lattice);
  VoxelField field;
  field.lattice = lattice;
  field.density.assign(lattice.size(), 0.f);
  field.bias = transparent_bias(alpha_init, step_length);
  field.encoding_levels = config.encoding_levels;
  field.seed = seed;
  field.color_mlp = make_color_mlp(config, seed);
  return field;
}

VoxelField init_from_prior(const SdfGrid& sdf, double beta, double alpha_init, const ColorNetConfig& config,
                           std::uint64_t seed) {
  VoxelField field = init_transparent(sdf.lattice, alpha_init, sdf.lattice.voxel_size, config, seed);
  const std::vector<double> raw = sdf_to_density(sdf, beta, field.bias);
  for (std::size_t n = 0; n < raw.size(); ++n) field.density[n] = static_cast<float>(raw[n]);
  return field;
}

void write_field(std::ostream& out, const VoxelField& field) {
  io::write_magic(out, kFieldMagic);
  io::write_u32(out, kFieldVersion);
  write_sdf(out, SdfGrid{field.lattice, field.density});
  write_mlp(out, field.color_mlp);
  io::write_f64(out, field.bias);
  io::write_u32(out, static_cast<std::uint32_t>(field.encoding_levels));
  io::write_u64(out, field.seed);
}

VoxelField read_field(std::istream& in) {
  io::expect_magic(in, kFieldMagic);
  const std::uint32_t version = io::read_u32(in);
  if (version != kFieldVersion) throw FormatError("unsupported VFLD version " + std::to_string(version));
  VoxelField field;
  SdfGrid grid = read_sdf(in);
  field.lattice = grid.lattice;
  field.density = std::move(grid.values);
  field.color_mlp = read_mlp(in);
  field.bias = io::read_f64(in);
  const std::uint32_t levels = io::read_u32(in);
  if (levels > 16) throw FormatError("implausible encoding level count");
  field.encoding_levels = static_cast<int>(levels);
  field.seed = io::read_u64(in);
  if (field.color_mlp.input_width() != encoding_width(field.encoding_levels) || field.color_mlp.output_width() != 3) {
    throw FormatError("color MLP shape does not match encoding levels");
  }
  if (!std::isfinite(field.bias)) throw FormatError("non-finite density bias");
  return field;
}

void save_field(const std::filesystem::path& path, const VoxelField& field) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParameterError("cannot open " + path.string() + " for writing");
  write_field(out, field);
  if (!out) throw FormatError("failed writing " + path.string());
}

VoxelField load_field(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParameterError("cannot open " + path.string());
  return read_field(in);
}

}  // namespace dreamvox
