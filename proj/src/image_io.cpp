// SPDX-License-Identifier: Apache-2.0
#include "dreamvox/image.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <memory>

#include "dreamvox/errors.hpp"

namespace dreamvox {
namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

unsigned char to_byte(double v) {
  const double c = std::clamp(v, 0.0, 1.0);
  return static_cast<unsigned char>(std::floor(c * 255.0 + 0.5));
}

}  // namespace

double mse(const ImageRgb& a, const ImageRgb& b) {
  if (!a.same_shape(b)) throw ParameterError("mse: image shapes differ");
  double s = 0;
  for (std::size_t n = 0; n < a.data.size(); ++n) {
    const double d = a.data[n] - b.data[n];
    s += d * d;
  }
  return a.data.empty() ? 0.0 : s / static_cast<double>(a.data.size());
}

double psnr(const ImageRgb& a, const ImageRgb& b) { return -10.0 * std::log10(mse(a, b)); }

void write_png(const std::filesystem::path& path, const ImageRgb& image) {
  FilePtr file(std::fopen(path.string().c_str(), "wb"));
  if (!file) throw ParameterError("cannot open " + path.string() + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw FormatError("libpng initialization failed");
  }
  std::vector<unsigned char> row(static_cast<std::size_t>(image.width) * 3);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw FormatError("failed writing " + path.string());
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x)
      for (int c = 0; c < 3; ++c) row[static_cast<std::size_t>(x) * 3 + c] = to_byte(image.at(x, y, c));
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

ImageRgb read_png(const std::filesystem::path& path) {
  FilePtr file(std::fopen(path.string().c_str(), "rb"));
  if (!file) throw ParameterError("cannot open " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("libpng initialization failed");
  }
  ImageRgb image;
  std::vector<unsigned char> row;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("failed reading " + path.string());
  }
  png_init_io(png, file.get());
  png_read_info(png, info);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_palette_to_rgb(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);
  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));
  image = ImageRgb(w, h);
  row.resize(png_get_rowbytes(png, info));
  for (int y = 0; y < h; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) image.at(x, y, c) = row[static_cast<std::size_t>(x) * 3 + c] / 255.0;
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return image;
}

std::vector<unsigned char> to_f32_bytes(const ImageRgb& image) {
  std::vector<unsigned char> bytes(image.data.size() * 4);
  for (std::size_t n = 0; n < image.data.size(); ++n) {
    const auto u = std::bit_cast<std::uint32_t>(static_cast<float>(image.data[n]));
    for (int b = 0; b < 4; ++b) bytes[n * 4 + b] = static_cast<unsigned char>((u >> (8 * b)) & 0xFFu);
  }
  return bytes;
}

ImageRgb from_f32_bytes(const std::vector<unsigned char>& bytes, int width, int height) {
  if (width <= 0 || height <= 0) throw ParameterError("image dimensions must be positive");
  ImageRgb image(width, height);
  if (bytes.size() != image.data.size() * 4) throw ParameterError("f32 image payload has the wrong length");
  for (std::size_t n = 0; n < image.data.size(); ++n) {
    std::uint32_t u = 0;
    for (int b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(bytes[n * 4 + b]) << (8 * b);
    image.data[n] = std::bit_cast<float>(u);
  }
  return image;
}

}  // namespace dreamvox
