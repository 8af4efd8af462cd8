// SPDX-License-Identifier: Apache-2.0
//
// Conditional denoising diffusion over embedding vectors: cosine noise
// schedule, forward corruption, x0-prediction training objective, ancestral
// sampling, and a small MLP denoiser trained with AdamW + EMA.
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "dreamvox/adam.hpp"
#include "dreamvox/mlp.hpp"
#include "dreamvox/rng.hpp"

namespace dreamvox::diffusion {

/// alpha_bar[0] = 1 and alpha_bar[t] = Π_{s≤t} (1 − beta[s]); beta[0] is unused (0).
struct Schedule {
  int timesteps = 0;
  double offset = 0.008;
  double max_beta = 0.999;
  std::vector<double> alpha_bar;
  std::vector<double> beta;

  double alpha(int t) const { return 1.0 - beta[t]; }
};

/// f(t) = cos²(((t/T + s)/(1 + s))·π/2); β_t = min(1 − f(t)/f(t−1), max_beta).
Schedule cosine_schedule(int timesteps, double offset = 0.008, double max_beta = 0.999);

/// √ᾱ_t x0 + √(1 − ᾱ_t) noise, for 1 ≤ t ≤ T (t = 0 returns x0).
Eigen::VectorXd q_sample(const Eigen::VectorXd& x0, int t, const Eigen::VectorXd& noise, const Schedule& schedule);

enum class Parameterization : std::uint32_t { x_start = 0, epsilon = 1 };

/// Sinusoidal embedding of the timestep (dim must be even).
Eigen::VectorXd timestep_embedding(int t, int dim);

struct DenoiserConfig {
  int data_dim = 2;
  int cond_dim = 2;
  int time_dim = 16;
  std::vector<int> hidden_widths{128, 128, 128};
  Parameterization parameterization = Parameterization::x_start;
};

/// MLP on (x_t ⊕ condition ⊕ timestep embedding).
struct Denoiser {
  DenoiserConfig config;
  MlpParams net;

  int input_width() const { return config.data_dim + config.cond_dim + config.time_dim; }
};

Denoiser make_denoiser(const DenoiserConfig& config, Rng& rng);

/// Network input matrix, one column per batch element.
Eigen::MatrixXd denoiser_input(const DenoiserConfig& config, const Eigen::MatrixXd& x_t, const std::vector<int>& t,
                               const Eigen::MatrixXd& cond);

/// x̂0 for each column; converts from ε̂ when the model predicts noise.
Eigen::MatrixXd predict_x0(const Denoiser& model, const Eigen::MatrixXd& x_t, const std::vector<int>& t,
                           const Eigen::MatrixXd& cond, const Schedule& schedule);

struct TrainingDraw {
  std::vector<int> t;
  Eigen::MatrixXd noise;
  Eigen::MatrixXd x_t;
};

/// t ~ U{1..T} and ε ~ N(0, I) per column, then q_sample.
TrainingDraw draw_training_inputs(const Eigen::MatrixXd& x0, const Schedule& schedule, Rng& rng);

/// Mean over columns of ‖prediction − target‖².
double prediction_loss(const Eigen::MatrixXd& prediction, const Eigen::MatrixXd& target);

struct LossAndGrad {
  double loss = 0.0;
  MlpGradients grads;
};

/// E‖x̂0 − x0‖² (or E‖ε̂ − ε‖² for the ε parameterization) with MLP gradients.
LossAndGrad training_loss(const Eigen::MatrixXd& x0, const Eigen::MatrixXd& cond, const Denoiser& model,
                          const Schedule& schedule, Rng& rng);
/// Same objective on a fixed draw (for gradient checks).
LossAndGrad training_loss(const Eigen::MatrixXd& x0, const Eigen::MatrixXd& cond, const Denoiser& model,
                          const Schedule& schedule, const TrainingDraw& draw);

/// Rescales grads so their global L2 norm is at most max_norm; returns the norm before clipping.
double clip_gradient_norm(MlpGradients& grads, double max_norm);

struct PosteriorCoefficients {
  double x0_coef = 0.0;
  double xt_coef = 0.0;
  double variance = 0.0;
};

PosteriorCoefficients posterior(const Schedule& schedule, int t);

using X0Predictor = std::function<Eigen::MatrixXd(const Eigen::MatrixXd& x_t, int t)>;

struct SamplerOptions {
  bool zero_variance = false;  // force σ_t = 0 at every step
};

/// Ancestral sampling of `count` columns of dimension `dim` from x_T ~ N(0, I).
Eigen::MatrixXd sample(const X0Predictor& predictor, int dim, int count, const Schedule& schedule, Rng& rng,
                       const SamplerOptions& options = {});

/// Conditional samples; column j of `cond` conditions column j of the result.
Eigen::MatrixXd sample(const Denoiser& model, const Eigen::MatrixXd& cond, const Schedule& schedule, Rng& rng,
                       const SamplerOptions& options = {});

struct TrainConfig {
  int timesteps = 100;
  double lr = 1.1e-4;
  double weight_decay = 6.02e-2;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double max_grad_norm = 0.5;
  double ema_beta = 0.9999;
  int ema_update_every = 10;
  int ema_update_after = 100;
  double ema_inv_gamma = 1.0;
  double ema_power = 2.0 / 3.0;
  int batch_size = 1024;
  long steps = 500000;
  std::uint64_t seed = 0;
};

/// Model and training constants of the production mapping network
/// (transformer dim 512 maps to MLP width 512 here).
TrainConfig paper_preset();
DenoiserConfig paper_denoiser(int data_dim, int cond_dim);
/// Same optimizer math with fewer steps and a smaller network, sized for desk-scale toys.
TrainConfig desk_preset();
DenoiserConfig desk_denoiser(int data_dim, int cond_dim);

struct Dataset {
  Eigen::MatrixXd cond;    // d_c x N
  Eigen::MatrixXd target;  // d x N

  int data_dim() const { return static_cast<int>(target.rows()); }
  int cond_dim() const { return static_cast<int>(cond.rows()); }
  long size() const { return static_cast<long>(target.cols()); }
};

class Trainer {
 public:
  Trainer(Denoiser model, const TrainConfig& config);

  /// One AdamW step on a batch; returns the pre-update loss.
  double step(const Eigen::MatrixXd& x0, const Eigen::MatrixXd& cond);

  const Denoiser& model() const { return model_; }
  /// Exponential moving average of the weights (ema_pytorch warmup rule).
  const Denoiser& ema_model() const { return ema_; }
  const Schedule& schedule() const { return schedule_; }
  long steps_taken() const { return steps_; }

 private:
  Denoiser model_;
  Denoiser ema_;
  TrainConfig config_;
  Schedule schedule_;
  AdamState<float> adam_;
  Rng rng_;
  long steps_ = 0;
};

/// Draws `config.steps` random minibatches from the dataset.
Trainer train(const Dataset& data, const DenoiserConfig& model_config, const TrainConfig& config,
              const std::function<void(long step, double loss)>& on_step = {});

// Synthetic conditional distributions standing in for paired embeddings.
// Labels are encoded one-hot in a 2-dim condition.
enum class Synthetic { mixture2, rings };
Synthetic parse_synthetic(const std::string& name);
Eigen::VectorXd synthetic_condition(int label);
/// `count` draws from the closed-form conditional generator.
Eigen::MatrixXd sample_synthetic(Synthetic kind, int label, int count, Rng& rng);
/// Balanced labels, `count` pairs.
Dataset make_synthetic_dataset(Synthetic kind, long count, Rng& rng);

/// Mean over random unit directions of the 1-D Wasserstein-1 distance
/// between equal-size projected sample sets.
double sliced_wasserstein(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, int projections, Rng& rng);

void save_model(const std::filesystem::path& path, const Trainer& trainer);
struct LoadedModel {
  Schedule schedule;
  Denoiser model;
  Denoiser ema;
  long steps = 0;
};
LoadedModel load_model(const std::filesystem::path& path);

void save_dataset(const std::filesystem::path& path, const Dataset& data);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace dreamvox::diffusion
