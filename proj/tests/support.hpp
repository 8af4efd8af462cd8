// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <filesystem>
#include <string>

#include "dreamvox/mlp.hpp"
#include "dreamvox/renderer.hpp"
#include "dreamvox/rng.hpp"
#include "dreamvox/sdf_prior.hpp"
#include "dreamvox/voxel_field.hpp"

namespace testing {

inline double rel_err(double a, double b, double floor = 1e-12) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Fresh directory under the system temp dir, removed on destruction.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    path = std::filesystem::temp_directory_path() /
           ("dreamvox_" + tag + "_" + std::to_string(dreamvox::Rng::mix(reinterpret_cast<std::uintptr_t>(this)) % 1000000007));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::filesystem::path operator/(const std::string& name) const { return path / name; }
};

inline dreamvox::SdfGrid sphere_grid(int n, double radius, double extent = 2.0) {
  return dreamvox::make_primitive_sdf(dreamvox::SpherePrimitive{dreamvox::Vec3::Zero(), radius},
                                      dreamvox::centered_cube_lattice(n, extent));
}

/// Prior-initialized field with a small color net, perturbed so gradients are generic.
inline dreamvox::VoxelField random_field(int n, std::uint64_t seed, int levels = 2) {
  dreamvox::ColorNetConfig color{levels, {16, 16}};
  auto field = dreamvox::init_from_prior(sphere_grid(n, 0.6), 0.05, 1e-6, color, seed);
  dreamvox::Rng rng(seed + 99);
  // σ = softplus(u) with u in [-2, 1.5]: semi-transparent, so every sample contributes.
  for (float& v : field.density) v = static_cast<float>(-field.bias + rng.uniform(-2.0, 1.5));
  // Nonzero biases keep every ReLU pre-activation off zero, away from the kinks.
  for (auto& layer : field.color_mlp.layers)
    for (float& b : layer.bias.reshaped()) b = static_cast<float>(rng.uniform(-0.1, 0.1));
  return field;
}

/// Encoded color-net inputs of every sample on the tape, one column per sample.
inline Eigen::MatrixXd tape_encodings(const dreamvox::RenderTape& tape) {
  const auto K = static_cast<std::size_t>(tape.samples_per_ray);
  Eigen::MatrixXd enc(dreamvox::encoding_width(tape.encoding_levels), static_cast<Eigen::Index>(tape.t.size()));
  for (std::size_t s = 0; s < tape.t.size(); ++s) {
    const dreamvox::Ray& ray = tape.rays[s / K];
    const dreamvox::Vec3 x = ray.origin + tape.t[s] * ray.direction;
    dreamvox::positional_encoding_into(dreamvox::normalize_to_box(tape.lattice, x), tape.encoding_levels,
                                       enc.col(static_cast<Eigen::Index>(s)).data());
  }
  return enc;
}

/// Signs of every hidden ReLU unit over a batch of inputs.
inline std::vector<bool> relu_pattern(const dreamvox::MlpParams& params, const Eigen::MatrixXd& inputs) {
  dreamvox::MlpEvaluator::Trace trace;
  dreamvox::MlpEvaluator(params).forward(inputs, &trace);
  std::vector<bool> pattern;
  for (std::size_t l = 1; l + 1 < trace.activations.size(); ++l)
    for (double v : trace.activations[l].reshaped()) pattern.push_back(v > 0);
  return pattern;
}

/// Central difference of `loss` in one MLP parameter. The step starts at h and is halved while
/// the stencil straddles a ReLU kink; within a fixed pattern every pre-activation is affine in
/// the parameter, so equal patterns at both ends rule out a kink in between.
template <class Loss>
double mlp_central_difference(float& param, double h, const dreamvox::MlpParams& params, const Eigen::MatrixXd& inputs,
                              const Loss& loss) {
  const float orig = param;
  for (; h > 1e-6; h *= 0.5) {
    param = orig + static_cast<float>(h);
    const auto up_pattern = relu_pattern(params, inputs);
    param = orig - static_cast<float>(h);
    const auto down_pattern = relu_pattern(params, inputs);
    if (up_pattern == down_pattern) break;
  }
  param = orig + static_cast<float>(h);
  const double up = param;
  const double lp = loss();
  param = orig - static_cast<float>(h);
  const double down = param;
  const double lm = loss();
  param = orig;
  return (lp - lm) / (up - down);
}

}  // namespace testing
