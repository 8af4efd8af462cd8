// SPDX-License-Identifier: Apache-2.0
#include "dreamvox/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dreamvox/activations.hpp"
#include "dreamvox/errors.hpp"

namespace dreamvox {

void validate_weights(const LossWeights& w) {
  if (!(w.guidance >= 0 && w.transmittance >= 0 && w.prior >= 0)) throw ParameterError("loss weights must be >= 0");
  if (!(w.tau_target > 0 && w.tau_target < 1)) throw ParameterError("tau_target must lie in (0, 1)");
}

MapLoss transmittance_loss(std::span<const double> transmittance, double tau_target) {
  MapLoss out{0.0, std::vector<double>(transmittance.size(), 0.0)};
  if (transmittance.empty()) return out;
  const double n = static_cast<double>(transmittance.size());
  const double mean = std::accumulate(transmittance.begin(), transmittance.end(), 0.0) / n;
  out.loss = -std::min(tau_target, mean);
  if (mean < tau_target) std::fill(out.grad.begin(), out.grad.end(), -1.0 / n);
  return out;
}

double annealed_tau(long step, double start, double end, long ramp_steps) {
  if (ramp_steps <= 0 || step >= ramp_steps) return end;
  const double f = static_cast<double>(std::max(step, 0L)) / static_cast<double>(ramp_steps);
  return start + (end - start) * f;
}

double voxel_opacity(double raw, double bias, double step_length) {
  return -std::expm1(-softplus(raw + bias) * step_length);
}

MapLoss prior_preserving_loss(const VoxelField& field, const SdfGrid& sdf) {
  if (!(field.lattice == sdf.lattice)) throw ParameterError("prior loss: field and SDF lattices differ");
  const double s = field.lattice.voxel_size;
  MapLoss out{0.0, std::vector<double>(field.density.size(), 0.0)};
  for (std::size_t n = 0; n < field.density.size(); ++n) {
    if (!(sdf.values[n] < 0.f)) continue;
    const double z = static_cast<double>(field.density[n]) + field.bias;
    const double sigma = softplus(z);
    out.loss -= -std::expm1(-sigma * s);
    out.grad[n] = -std::exp(-sigma * s) * s * sigmoid(z);
  }
  return out;
}

double interior_mean_opacity(const VoxelField& field, const SdfGrid& sdf) {
  if (!(field.lattice == sdf.lattice)) throw ParameterError("field and SDF lattices differ");
  double sum = 0;
  std::size_t count = 0;
  for (std::size_t n = 0; n < field.density.size(); ++n) {
    if (sdf.values[n] < 0.f) {
      sum += voxel_opacity(field.density[n], field.bias, field.lattice.voxel_size);
      ++count;
    }
  }
  return count ? sum / static_cast<double>(count) : 0.0;
}

TotalLoss total_loss(const VoxelField& field, const RenderOutput& output, const GuidanceResult& guidance,
                     const SdfGrid* prior, const LossWeights& weights) {
  validate_weights(weights);
  if (!guidance.grad.same_shape(output.rgb)) throw ParameterError("guidance gradient shape does not match the render");
  TotalLoss out;
  out.breakdown.guidance = guidance.loss;
  out.dL_dimage = guidance.grad;
  for (double& g : out.dL_dimage.data) g *= weights.guidance;

  const MapLoss tl = transmittance_loss(output.transmittance, weights.tau_target);
  out.breakdown.transmittance = tl.loss;
  out.dL_dtransmittance = tl.grad;
  for (double& g : out.dL_dtransmittance) g *= weights.transmittance;

  if (weights.prior > 0) {
    if (!prior) throw ParameterError("prior weight is positive but no prior grid was given");
    MapLoss pl = prior_preserving_loss(field, *prior);
    out.breakdown.prior = pl.loss;
    for (double& g : pl.grad) g *= weights.prior;
    out.dL_ddensity = std::move(pl.grad);
  } else if (prior) {
    out.breakdown.prior = prior_preserving_loss(field, *prior).loss;
  }
  out.breakdown.total = weights.guidance * out.breakdown.guidance + weights.transmittance * out.breakdown.transmittance +
                        weights.prior * out.breakdown.prior;
  return out;
}

FieldGradients total_loss_backward(const RenderOutput& output, const ImageRgb& background, const TotalLoss& loss) {
  ImageRgb dL_drgb;
  std::vector<double> dL_dT;
  composite_background_backward(output, background, loss.dL_dimage, dL_drgb, dL_dT);
  for (std::size_t p = 0; p < dL_dT.size(); ++p) dL_dT[p] += loss.dL_dtransmittance[p];
  FieldGradients grads = render_backward(output.tape, dL_drgb, dL_dT);
  if (!loss.dL_ddensity.empty()) {
    if (loss.dL_ddensity.size() != grads.density.size()) throw ParameterError("prior gradient shape mismatch");
    for (std::size_t n = 0; n < grads.density.size(); ++n) grads.density[n] += loss.dL_ddensity[n];
  }
  return grads;
}

}  // namespace dreamvox
