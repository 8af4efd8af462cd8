// SPDX-License-Identifier: Apache-2.0
//
// Guided optimization of a VoxelField: per step sample a view, render,
// composite a background, score with the guidance handle, combine losses,
// backpropagate, and update grid and color MLP with separate Adam instances.
#pragma once

#include <filesystem>
#include <functional>
#include <string>

#include "dreamvox/adam.hpp"
#include "dreamvox/camera.hpp"
#include "dreamvox/guidance.hpp"
#include "dreamvox/losses.hpp"
#include "dreamvox/renderer.hpp"
#include "dreamvox/voxel_field.hpp"

namespace dreamvox {

struct OptimConfig {
  double lr_grid = 5e-1;
  double lr_mlp = 5e-3;
  long steps = 5000;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  /// Multiplier reached by both learning rates at the final step (exponential
  /// decay); 1 disables decay.
  double lr_decay_final = 1.0;
  std::uint64_t seed = 0;
  LossWeights weights;
  bool anneal_tau = true;
  double tau_start = 0.4;
  long tau_ramp_steps = 500;
  PoseSampling poses;
  RenderSettings render;
  BackgroundMode background = BackgroundMode::solid_random;
  long checkpoint_every = 0;  // 0 = only when the caller asks

  // Field construction (used by the CLI when no checkpoint is resumed).
  int grid_resolution = 100;
  double grid_extent = 2.0;
  double prior_beta = 0.05;
  double alpha_init = 1e-6;
  ColorNetConfig color;
};

void validate_config(const OptimConfig& config);

/// Everything needed to resume: parameters, both Adam states and the next step index.
struct OptimizerState {
  VoxelField field;
  AdamState<float> grid_adam;
  AdamState<float> mlp_adam;
  long step = 0;

  static OptimizerState fresh(VoxelField field);
  bool operator==(const OptimizerState&) const = default;
};

struct StepReport {
  long step = 0;
  LossBreakdown loss;
  double tau = 0.0;
  double mean_transmittance = 0.0;
};

struct OptimizeCallbacks {
  std::function<void(const StepReport&)> on_step;
  /// Invoked after every `checkpoint_every` completed steps.
  std::function<void(const OptimizerState&)> on_checkpoint;
  /// Return true to stop after the current step (the state stays resumable).
  std::function<bool(const OptimizerState&)> should_stop;
};

/// Runs steps [state.step, config.steps). `state` is updated in place, so
/// after an exception it still holds the last completed step and can be
/// checkpointed for resumption.
void optimize(OptimizerState& state, GuidanceHandle& guidance, const SdfGrid* prior, const OptimConfig& config,
              const OptimizeCallbacks& callbacks = {});

VoxelField optimize(VoxelField field, GuidanceHandle& guidance, const SdfGrid* prior, const OptimConfig& config,
                    const OptimizeCallbacks& callbacks = {});

/// `<stem>.vfld` plus the `<stem>.adam` optimizer sidecar.
void save_checkpoint(const std::filesystem::path& stem, const OptimizerState& state);
OptimizerState load_checkpoint(const std::filesystem::path& stem);

std::string config_to_json(const OptimConfig& config);
/// Values present in `text` override `base`; unknown keys are rejected.
OptimConfig config_from_json(const std::string& text, const OptimConfig& base = {});

}  // namespace dreamvox
