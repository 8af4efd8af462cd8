// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <vector>

namespace dreamvox {

/// H x W x 3 linear RGB, row-major, channels interleaved.
struct ImageRgb {
  int width = 0;
  int height = 0;
  std::vector<double> data;

  ImageRgb() = default;
  ImageRgb(int w, int h, double fill = 0.0)
      : width(w), height(h), data(static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 3, fill) {}

  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * static_cast<std::size_t>(height); }
  double& at(int x, int y, int c) { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  double at(int x, int y, int c) const { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  bool same_shape(const ImageRgb& o) const { return width == o.width && height == o.height; }
};

/// Mean squared error over all channels.
double mse(const ImageRgb& a, const ImageRgb& b);
/// 10 log10(1 / mse) for images in [0, 1].
double psnr(const ImageRgb& a, const ImageRgb& b);

/// 8-bit RGB PNG; each channel is clamped to [0, 1], scaled by 255 and rounded half-up.
void write_png(const std::filesystem::path& path, const ImageRgb& image);
ImageRgb read_png(const std::filesystem::path& path);

/// Raw f32 little-endian RGB interleaved, row-major (the guidance wire layout).
std::vector<unsigned char> to_f32_bytes(const ImageRgb& image);
ImageRgb from_f32_bytes(const std::vector<unsigned char>& bytes, int width, int height);

}  // namespace dreamvox
