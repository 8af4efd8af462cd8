// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <vector>

#include "dreamvox/guidance.hpp"
#include "dreamvox/renderer.hpp"
#include "dreamvox/sdf_prior.hpp"
#include "dreamvox/voxel_field.hpp"

namespace dreamvox {

struct LossWeights {
  double guidance = 1.0;
  double transmittance = 0.5;
  double prior = 1e-3;
  double tau_target = 0.88;
};

void validate_weights(const LossWeights& weights);

struct LossBreakdown {
  double guidance = 0.0;
  double transmittance = 0.0;
  double prior = 0.0;
  double total = 0.0;
};

struct MapLoss {
  double loss = 0.0;
  std::vector<double> grad;
};

/// −min(tau, mean T); gradient −1/(HW) per pixel while mean T < tau.
MapLoss transmittance_loss(std::span<const double> transmittance, double tau_target);

/// Linear ramp of the transmittance target from `start` to `end` over `ramp_steps`.
double annealed_tau(long step, double start, double end, long ramp_steps);

/// 1 − exp(−softplus(raw + bias) · s)
double voxel_opacity(double raw, double bias, double step_length);

/// −Σ 1(sdf < 0) · opacity(voxel), with path length one voxel.
MapLoss prior_preserving_loss(const VoxelField& field, const SdfGrid& sdf);

/// Mean voxel opacity over the prior's interior (sdf < 0).
double interior_mean_opacity(const VoxelField& field, const SdfGrid& sdf);

struct TotalLoss {
  LossBreakdown breakdown;
  ImageRgb dL_dimage;                    // w.r.t. the guided (background-composited) image
  std::vector<double> dL_dtransmittance;  // w.r.t. T_{K+1}
  std::vector<double> dL_ddensity;        // direct prior term on the raw grid (empty if unused)
};

/// Weighted sum of guidance, transmittance and prior terms with their
/// adjoints. `prior` may be null when weights.prior == 0.
TotalLoss total_loss(const VoxelField& field, const RenderOutput& output, const GuidanceResult& guidance,
                     const SdfGrid* prior, const LossWeights& weights);

/// Routes the adjoints of total_loss through background compositing and the
/// renderer, then adds the direct prior gradient.
FieldGradients total_loss_backward(const RenderOutput& output, const ImageRgb& background, const TotalLoss& loss);

}  // namespace dreamvox
