// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "dreamvox/lattice.hpp"
#include "dreamvox/rng.hpp"

namespace dreamvox {

struct Camera {
  Vec3 position = Vec3(3, 0, 0);
  Vec3 look_at = Vec3::Zero();
  Vec3 up = Vec3::UnitZ();
  double fov_y_deg = 40.0;
  int width = 64;
  int height = 64;
};

struct Ray {
  Vec3 origin;
  Vec3 direction;  // unit length
};

/// Degrees, inclusive on both ends.
struct AngleRange {
  double lo = 0.0;
  double hi = 0.0;
};

struct PoseJitter {
  bool radius = false;   // radius drawn from [0.9 r, 1.1 r]
  bool look_at = false;  // look-at point offset by up to 5% of r per axis
};

/// Orbit sampling around the origin; defaults are the shape-rendering ranges.
struct PoseSampling {
  AngleRange azimuth{-90.0, 90.0};
  AngleRange elevation{20.0, 30.0};
  double radius = 2.5;
  double fov_y_deg = 40.0;
  int width = 168;
  int height = 168;
  PoseJitter jitter{};
};

void validate_camera(const Camera& camera);

/// Camera on the sphere of `radius` at the given azimuth (from +x towards +y)
/// and elevation (towards +z), looking at the origin with +z up.
Camera orbit_camera(double azimuth_deg, double elevation_deg, double radius, double fov_y_deg, int width,
                    int height);

Camera sample_camera_pose(Rng& rng, const PoseSampling& sampling);

/// Pinhole ray through continuous pixel coordinates (px, py); (0, 0) is the
/// top-left image corner and (width, height) the bottom-right one.
Ray camera_ray(const Camera& camera, double px, double py);

/// One ray per pixel center, row-major.
std::vector<Ray> generate_rays(const Camera& camera);

}  // namespace dreamvox
