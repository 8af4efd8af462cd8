// SPDX-License-Identifier: Apache-2.0
#include "dreamvox/camera.hpp"

#include <cmath>
#include <numbers>

#include <Eigen/Geometry>

#include "dreamvox/errors.hpp"

namespace dreamvox {
namespace {

double radians(double deg) { return deg * std::numbers::pi / 180.0; }

struct Basis {
  Vec3 forward, right, up;
};

Basis camera_basis(const Camera& camera) {
  const Vec3 forward = (camera.look_at - camera.position).normalized();
  const Vec3 right = forward.cross(camera.up).normalized();
  return {forward, right, right.cross(forward)};
}

}  // namespace

void validate_camera(const Camera& camera) {
  if (camera.width <= 0 || camera.height <= 0) throw ParameterError("camera resolution must be positive");
  if (!(camera.fov_y_deg > 0.0 && camera.fov_y_deg < 180.0)) throw ParameterError("fov_y must lie in (0, 180)");
  const Vec3 view = camera.look_at - camera.position;
  if (!(view.norm() > 0.0)) throw ParameterError("camera position coincides with look_at");
  if (view.normalized().cross(camera.up).norm() < 1e-9) throw ParameterError("camera up is parallel to the view direction");
}

Camera orbit_camera(double azimuth_deg, double elevation_deg, double radius, double fov_y_deg, int width,
                    int height) {
  const double az = radians(azimuth_deg), el = radians(elevation_deg);
  Camera camera;
  camera.position = radius * Vec3(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el));
  camera.look_at = Vec3::Zero();
  camera.up = Vec3::UnitZ();
  camera.fov_y_deg = fov_y_deg;
  camera.width = width;
  camera.height = height;
  return camera;
}

Camera sample_camera_pose(Rng& rng, const PoseSampling& sampling) {
  if (sampling.azimuth.hi < sampling.azimuth.lo || sampling.elevation.hi < sampling.elevation.lo) {
    throw ParameterError("angle ranges must satisfy lo <= hi");
  }
  if (!(sampling.radius > 0.0)) throw ParameterError("orbit radius must be positive");
  const double az = rng.uniform(sampling.azimuth.lo, sampling.azimuth.hi);
  const double el = rng.uniform(sampling.elevation.lo, sampling.elevation.hi);
  double radius = sampling.radius;
  if (sampling.jitter.radius) radius *= rng.uniform(0.9, 1.1);
  Camera camera = orbit_camera(az, el, radius, sampling.fov_y_deg, sampling.width, sampling.height);
  if (sampling.jitter.look_at) {
    for (int a = 0; a < 3; ++a) camera.look_at[a] += rng.uniform(-0.05, 0.05) * sampling.radius;
  }
  return camera;
}

Ray camera_ray(const Camera& camera, double px, double py) {
  const Basis b = camera_basis(camera);
  const double tan_half = std::tan(0.5 * radians(camera.fov_y_deg));
  const double aspect = static_cast<double>(camera.width) / camera.height;
  const double sx = (2.0 * px / camera.width - 1.0) * tan_half * aspect;
  const double sy = (1.0 - 2.0 * py / camera.height) * tan_half;
  return {camera.position, (b.forward + sx * b.right + sy * b.up).normalized()};
}

std::vector<Ray> generate_rays(const Camera& camera) {
  validate_camera(camera);
  std::vector<Ray> rays;
  rays.reserve(static_cast<std::size_t>(camera.width) * camera.height);
  for (int y = 0; y < camera.height; ++y)
    for (int x = 0; x < camera.width; ++x) rays.push_back(camera_ray(camera, x + 0.5, y + 0.5));
  return rays;
}

}  // namespace dreamvox
