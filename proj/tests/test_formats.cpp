// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <fstream>
#include <sstream>

#include "dreamvox/binary_io.hpp"
#include "dreamvox/errors.hpp"
#include "dreamvox/image.hpp"
#include "support.hpp"

using namespace dreamvox;

TEST_CASE("little-endian primitives") {
  std::ostringstream out;
  io::write_u32(out, 0x01020304u);
  io::write_f32(out, 1.0f);
  const std::string b = out.str();
  CHECK(static_cast<unsigned char>(b[0]) == 0x04);
  CHECK(static_cast<unsigned char>(b[3]) == 0x01);
  CHECK(static_cast<unsigned char>(b[7]) == 0x3f);
  CHECK(static_cast<unsigned char>(b[6]) == 0x80);
  std::istringstream in(b);
  CHECK(io::read_u32(in) == 0x01020304u);
  CHECK(io::read_f32(in) == 1.0f);
  CHECK_THROWS_AS(io::read_u32(in), FormatError);
}

TEST_CASE("lattice header validation") {
  std::ostringstream out;
  Lattice lat = centered_cube_lattice(4, 1.0);
  io::write_lattice(out, lat);
  std::istringstream in(out.str());
  CHECK(io::read_lattice(in) == lat);
  lat.voxel_size = -1.f;
  std::ostringstream bad;
  io::write_lattice(bad, lat);
  std::istringstream in_bad(bad.str());
  CHECK_THROWS_AS(io::read_lattice(in_bad), FormatError);
}

TEST_CASE("trilinear stencil weights") {
  const Lattice lat = centered_cube_lattice(4, 4.0);  // voxel size 1, nodes at −1.5..1.5
  const TrilinearStencil st = trilinear_stencil(lat, Vec3(-1.25, -1.5, -1.5));
  double sum = 0;
  for (double w : st.weight) sum += w;
  CHECK(sum == doctest::Approx(1.0));
  CHECK(st.weight[0] == doctest::Approx(0.75));
  CHECK(st.weight[1] == doctest::Approx(0.25));
  const TrilinearStencil out = trilinear_stencil(lat, Vec3(-2.0, 0, 0));
  CHECK(out.index[0] == TrilinearStencil::npos);
}

TEST_CASE("PNG round trip with half-up rounding") {
  testing::TempDir dir("png");
  ImageRgb img(5, 3);
  for (std::size_t n = 0; n < img.data.size(); ++n) img.data[n] = double(n) / double(img.data.size());
  img.data[0] = -0.5;
  img.data[1] = 1.7;
  img.data[2] = 0.5 / 255.0;  // exactly half a step rounds up
  write_png(dir / "a.png", img);
  const ImageRgb back = read_png(dir / "a.png");
  REQUIRE(back.same_shape(img));
  CHECK(back.data[0] == 0.0);
  CHECK(back.data[1] == 1.0);
  CHECK(back.data[2] == doctest::Approx(1.0 / 255.0));
  for (std::size_t n = 3; n < img.data.size(); ++n) CHECK(back.data[n] == std::floor(img.data[n] * 255 + 0.5) / 255.0);
  std::ofstream(dir / "junk.png") << "not a png";
  CHECK_THROWS_AS(read_png(dir / "junk.png"), FormatError);
}

TEST_CASE("mse and psnr") {
  ImageRgb a(2, 2, 0.5), b(2, 2, 0.5);
  b.data[0] = 0.6;
  CHECK(mse(a, b) == doctest::Approx(0.01 / 12));
  CHECK(psnr(a, b) == doctest::Approx(10 * std::log10(12 / 0.01)));
  CHECK(std::isinf(psnr(a, a)));
}

TEST_CASE("named rng streams are independent and reproducible") {
  const Rng root(5);
  Rng a = root.split("camera", 3), b = root.split("camera", 3), c = root.split("camera", 4), d = root.split("background", 3);
  const auto va = a.next_u64();
  CHECK(va == b.next_u64());
  CHECK(va != c.next_u64());
  CHECK(va != d.next_u64());
}
