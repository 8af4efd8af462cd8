// SPDX-License-Identifier: Apache-2.0
//
// Differentiable volume rendering of a VoxelField: K uniformly spaced
// samples per ray, alpha compositing over a background color, and the exact
// reverse-mode pass for pixel-color and final-transmittance adjoints.
#pragma once

#include <memory>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "dreamvox/camera.hpp"
#include "dreamvox/image.hpp"
#include "dreamvox/mlp.hpp"
#include "dreamvox/voxel_field.hpp"

namespace dreamvox {

struct RenderSettings {
  double near = 0.8;
  double far = 4.2;
  int samples_per_ray = 192;
  Eigen::Vector3d background = Eigen::Vector3d::Ones();
  bool jitter = false;  // stratified jitter within each segment
  std::uint64_t jitter_seed = 0;
  int threads = 0;  // 0 = hardware concurrency
};

void validate_settings(const RenderSettings& settings);

/// Everything render_backward needs; independent of the field object.
struct RenderTape {
  int width = 0;
  int height = 0;
  int samples_per_ray = 0;
  double segment = 0.0;  // δ
  Eigen::Vector3d background = Eigen::Vector3d::Zero();
  Lattice lattice;
  int encoding_levels = 0;
  std::shared_ptr<const MlpEvaluator> color_net;
  std::vector<Ray> rays;
  // Per sample, ray-major (ray * K + i).
  std::vector<double> t;
  std::vector<double> sigma;
  std::vector<double> alpha;
  std::vector<double> transmittance;  // T_i before the sample
  std::vector<double> dsigma_draw;    // softplus'(raw + b)
  std::vector<Eigen::Vector3d> color;
  int threads = 0;
};

struct RenderOutput {
  ImageRgb rgb;
  std::vector<double> transmittance;  // T_{K+1} per pixel, row-major
  RenderTape tape;

  int width() const { return rgb.width; }
  int height() const { return rgb.height; }
};

RenderOutput render(const VoxelField& field, const Camera& camera, const RenderSettings& settings);

struct FieldGradients {
  std::vector<double> density;  // dL/draw per grid sample
  MlpGradients color;

  static FieldGradients zeros_like(const VoxelField& field);
  FieldGradients& operator+=(const FieldGradients& other);
};

/// Gradients of L with respect to the raw density grid and color MLP, given
/// dL/d(pixel rgb) and dL/d(T_{K+1}).
FieldGradients render_backward(const RenderTape& tape, const ImageRgb& dL_drgb, std::span<const double> dL_dtransmittance);

enum class BackgroundMode { solid_random, white, checkerboard, gaussian_noise };

BackgroundMode parse_background_mode(const std::string& name);
std::string to_string(BackgroundMode mode);

ImageRgb make_background(BackgroundMode mode, int width, int height, Rng& rng);

/// Replaces the render-time background: rgb − T·c_bg + T·bg.
ImageRgb composite_background(const RenderOutput& output, const ImageRgb& background);

/// Adjoint of composite_background: dL/drgb = dL/dimage and
/// dL/dT = Σ_c (bg_c − c_bg,c) · dL/dimage_c.
void composite_background_backward(const RenderOutput& output, const ImageRgb& background, const ImageRgb& dL_dimage,
                                   ImageRgb& dL_drgb, std::vector<double>& dL_dtransmittance);

ImageRgb background_augment(const RenderOutput& output, Rng& rng, BackgroundMode mode);

}  // namespace dreamvox
