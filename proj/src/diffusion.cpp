// SPDX-License-Identifier: Apache-2.0
#include "dreamvox/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "dreamvox/binary_io.hpp"
#include "dreamvox/errors.hpp"

namespace dreamvox::diffusion {
namespace {

constexpr char kModelMagic[] = "EDIF";
constexpr std::uint32_t kModelVersion = 1;
constexpr char kDatasetMagic[] = "EPRS";
constexpr std::uint32_t kDatasetVersion = 1;

Eigen::MatrixXd standard_normal(int rows, int cols, Rng& rng) {
  Eigen::MatrixXd m(rows, cols);
  for (int c = 0; c < cols; ++c)
    for (int r = 0; r < rows; ++r) m(r, c) = rng.normal();
  return m;
}

void check_timestep(int t, const Schedule& schedule) {
  if (t < 0 || t > schedule.timesteps) throw ParameterError("timestep " + std::to_string(t) + " out of range");
}

// Splits tensors into (matrices, vectors) so weight decay only touches matrices.
template <class Tensors>
std::pair<Tensors, Tensors> split_decay_groups(const Tensors& all) {
  Tensors weights, biases;
  for (std::size_t k = 0; k < all.size(); ++k) (k % 2 == 0 ? weights : biases).push_back(all[k]);
  return {weights, biases};
}

}  // namespace

Schedule cosine_schedule(int timesteps, double offset, double max_beta) {
  if (timesteps < 1) throw ParameterError("diffusion needs at least one timestep");
  Schedule s;
  s.timesteps = timesteps;
  s.offset = offset;
  s.max_beta = max_beta;
  auto f = [&](int t) {
    const double c = std::cos(((static_cast<double>(t) / timesteps + offset) / (1.0 + offset)) * std::numbers::pi / 2.0);
    return c * c;
  };
  s.beta.assign(timesteps + 1, 0.0);
  s.alpha_bar.assign(timesteps + 1, 1.0);
  for (int t = 1; t <= timesteps; ++t) {
    s.beta[t] = std::min(1.0 - f(t) / f(t - 1), max_beta);
    s.alpha_bar[t] = s.alpha_bar[t - 1] * (1.0 - s.beta[t]);
  }
  return s;
}

Eigen::VectorXd q_sample(const Eigen::VectorXd& x0, int t, const Eigen::VectorXd& noise, const Schedule& schedule) {
  check_timestep(t, schedule);
  if (x0.size() != noise.size()) throw ParameterError("q_sample: noise shape mismatch");
  const double ab = schedule.alpha_bar[t];
  return std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * noise;
}

Eigen::VectorXd timestep_embedding(int t, int dim) {
  if (dim <= 0 || dim % 2 != 0) throw ParameterError("timestep embedding dim must be positive and even");
  const int half = dim / 2;
  Eigen::VectorXd e(dim);
  for (int k = 0; k < half; ++k) {
    const double freq = std::exp(-std::log(10000.0) * k / half);
    e[k] = std::sin(t * freq);
    e[half + k] = std::cos(t * freq);
  }
  return e;
}

Denoiser make_denoiser(const DenoiserConfig& config, Rng& rng) {
  if (config.data_dim <= 0 || config.cond_dim < 0) throw ParameterError("invalid denoiser dimensions");
  Denoiser d;
  d.config = config;
  std::vector<int> widths{d.input_width()};
  widths.insert(widths.end(), config.hidden_widths.begin(), config.hidden_widths.end());
  widths.push_back(config.data_dim);
  d.net = make_mlp(widths, OutputActivation::identity, rng);
  return d;
}

Eigen::MatrixXd denoiser_input(const DenoiserConfig& config, const Eigen::MatrixXd& x_t, const std::vector<int>& t,
                               const Eigen::MatrixXd& cond) {
  const auto B = x_t.cols();
  if (x_t.rows() != config.data_dim || cond.rows() != config.cond_dim || cond.cols() != B ||
      static_cast<Eigen::Index>(t.size()) != B) {
    throw ParameterError("denoiser input shapes are inconsistent");
  }
  Eigen::MatrixXd in(config.data_dim + config.cond_dim + config.time_dim, B);
  in.topRows(config.data_dim) = x_t;
  in.middleRows(config.data_dim, config.cond_dim) = cond;
  for (Eigen::Index b = 0; b < B; ++b) in.col(b).tail(config.time_dim) = timestep_embedding(t[b], config.time_dim);
  return in;
}

Eigen::MatrixXd predict_x0(const Denoiser& model, const Eigen::MatrixXd& x_t, const std::vector<int>& t,
                           const Eigen::MatrixXd& cond, const Schedule& schedule) {
  Eigen::MatrixXd out = MlpEvaluator(model.net).forward(denoiser_input(model.config, x_t, t, cond));
  if (model.config.parameterization == Parameterization::x_start) return out;
  for (Eigen::Index b = 0; b < out.cols(); ++b) {
    const double ab = schedule.alpha_bar[t[b]];
    out.col(b) = (x_t.col(b) - std::sqrt(1.0 - ab) * out.col(b)) / std::sqrt(ab);
  }
  return out;
}

TrainingDraw draw_training_inputs(const Eigen::MatrixXd& x0, const Schedule& schedule, Rng& rng) {
  TrainingDraw d;
  const auto B = x0.cols();
  d.t.resize(B);
  for (auto& t : d.t) t = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(schedule.timesteps)));
  d.noise = standard_normal(static_cast<int>(x0.rows()), static_cast<int>(B), rng);
  d.x_t.resize(x0.rows(), B);
  for (Eigen::Index b = 0; b < B; ++b) d.x_t.col(b) = q_sample(x0.col(b), d.t[b], d.noise.col(b), schedule);
  return d;
}

double prediction_loss(const Eigen::MatrixXd& prediction, const Eigen::MatrixXd& target) {
  if (prediction.rows() != target.rows() || prediction.cols() != target.cols()) {
    throw ParameterError("prediction_loss: shape mismatch");
  }
  if (target.cols() == 0) return 0.0;
  return (prediction - target).squaredNorm() / static_cast<double>(target.cols());
}

LossAndGrad training_loss(const Eigen::MatrixXd& x0, const Eigen::MatrixXd& cond, const Denoiser& model,
                          const Schedule& /*schedule*/, const TrainingDraw& draw) {
  if (x0.cols() == 0) throw ParameterError("training batch is empty");
  const MlpEvaluator net(model.net);
  MlpEvaluator::Trace trace;
  const Eigen::MatrixXd out = net.forward(denoiser_input(model.config, draw.x_t, draw.t, cond), &trace);
  const Eigen::MatrixXd& target = model.config.parameterization == Parameterization::x_start ? x0 : draw.noise;
  LossAndGrad result{prediction_loss(out, target), MlpGradients::zeros_like(model.net)};
  const Eigen::MatrixXd dL_dout = 2.0 * (out - target) / static_cast<double>(x0.cols());
  net.backward(trace, dL_dout, result.grads);
  return result;
}

LossAndGrad training_loss(const Eigen::MatrixXd& x0, const Eigen::MatrixXd& cond, const Denoiser& model,
                          const Schedule& schedule, Rng& rng) {
  return training_loss(x0, cond, model, schedule, draw_training_inputs(x0, schedule, rng));
}

double clip_gradient_norm(MlpGradients& grads, double max_norm) {
  const double norm = std::sqrt(grads.squared_norm());
  if (norm > max_norm) grads *= max_norm / (norm + 1e-6);
  return norm;
}

PosteriorCoefficients posterior(const Schedule& schedule, int t) {
  if (t < 1 || t > schedule.timesteps) throw ParameterError("posterior timestep out of range");
  const double ab = schedule.alpha_bar[t], ab_prev = schedule.alpha_bar[t - 1], beta = schedule.beta[t];
  return {std::sqrt(ab_prev) * beta / (1.0 - ab), std::sqrt(1.0 - beta) * (1.0 - ab_prev) / (1.0 - ab),
          beta * (1.0 - ab_prev) / (1.0 - ab)};
}

Eigen::MatrixXd sample(const X0Predictor& predictor, int dim, int count, const Schedule& schedule, Rng& rng,
                       const SamplerOptions& options) {
  Eigen::MatrixXd x = standard_normal(dim, count, rng);
  for (int t = schedule.timesteps; t >= 1; --t) {
    const Eigen::MatrixXd x0_hat = predictor(x, t);
    const PosteriorCoefficients pc = posterior(schedule, t);
    x = pc.x0_coef * x0_hat + pc.xt_coef * x;
    if (t > 1 && !options.zero_variance) x += std::sqrt(pc.variance) * standard_normal(dim, count, rng);
  }
  return x;
}

Eigen::MatrixXd sample(const Denoiser& model, const Eigen::MatrixXd& cond, const Schedule& schedule, Rng& rng,
                       const SamplerOptions& options) {
  const auto count = cond.cols();
  X0Predictor predictor = [&](const Eigen::MatrixXd& x_t, int t) {
    return predict_x0(model, x_t, std::vector<int>(static_cast<std::size_t>(count), t), cond, schedule);
  };
  return sample(predictor, model.config.data_dim, static_cast<int>(count), schedule, rng, options);
}

TrainConfig paper_preset() { return TrainConfig{}; }

DenoiserConfig paper_denoiser(int data_dim, int cond_dim) {
  DenoiserConfig c;
  c.data_dim = data_dim;
  c.cond_dim = cond_dim;
  c.time_dim = 64;
  c.hidden_widths.assign(6, 512);
  return c;
}

TrainConfig desk_preset() {
  TrainConfig c = paper_preset();
  c.steps = 10000;
  return c;
}

DenoiserConfig desk_denoiser(int data_dim, int cond_dim) {
  DenoiserConfig c;
  c.data_dim = data_dim;
  c.cond_dim = cond_dim;
  c.time_dim = 32;
  c.hidden_widths = {128, 128, 128};
  return c;
}

Trainer::Trainer(Denoiser model, const TrainConfig& config)
    : model_(std::move(model)),
      ema_(model_),
      config_(config),
      schedule_(cosine_schedule(config.timesteps)),
      adam_(AdamState<float>::zeros(model_.net.parameter_count())),
      rng_(Rng(config.seed).split("diffusion_batches")) {
  if (!(config.lr > 0) || config.batch_size < 1) throw ParameterError("invalid diffusion training config");
}

double Trainer::step(const Eigen::MatrixXd& x0, const Eigen::MatrixXd& cond) {
  LossAndGrad lg = training_loss(x0, cond, model_, schedule_, rng_);
  if (!std::isfinite(lg.loss)) throw NumericalError("non-finite diffusion loss at step " + std::to_string(steps_));
  if (config_.max_grad_norm > 0) clip_gradient_norm(lg.grads, config_.max_grad_norm);
  // One Adam state covers all parameters; decay is applied to weight matrices only.
  auto params = model_.net.tensors();
  const auto grads_view = std::as_const(lg.grads).tensors();
  const AdamHyper hyper{config_.lr, config_.adam_beta1, config_.adam_beta2, config_.adam_eps, 0.0};
  for (std::size_t k = 0; k < params.size(); k += 2) {
    for (float& w : params[k]) w = static_cast<float>(w * (1.0 - config_.lr * config_.weight_decay));
  }
  adam_step<float>(params, grads_view, adam_, hyper);
  ++steps_;

  // ema_pytorch schedule: copy during warmup, then decay = 1 − (1 + e/γ)^−p capped at β.
  if (steps_ % config_.ema_update_every == 0) {
    if (steps_ <= config_.ema_update_after) {
      ema_.net = model_.net;
    } else {
      const double epoch = static_cast<double>(steps_ - config_.ema_update_after - 1);
      double decay = epoch <= 0 ? 0.0 : 1.0 - std::pow(1.0 + epoch / config_.ema_inv_gamma, -config_.ema_power);
      decay = std::clamp(decay, 0.0, config_.ema_beta);
      auto ema_t = ema_.net.tensors();
      const auto cur_t = std::as_const(model_.net).tensors();
      for (std::size_t k = 0; k < ema_t.size(); ++k)
        for (std::size_t i = 0; i < ema_t[k].size(); ++i)
          ema_t[k][i] = static_cast<float>(decay * ema_t[k][i] + (1.0 - decay) * cur_t[k][i]);
    }
  }
  return lg.loss;
}

Trainer train(const Dataset& data, const DenoiserConfig& model_config, const TrainConfig& config,
              const std::function<void(long, double)>& on_step) {
  if (data.size() == 0) throw ParameterError("empty dataset");
  if (data.data_dim() != model_config.data_dim || data.cond_dim() != model_config.cond_dim) {
    throw ParameterError("dataset dimensions do not match the denoiser");
  }
  Rng init_rng = Rng(config.seed).split("denoiser_init");
  Trainer trainer(make_denoiser(model_config, init_rng), config);
  Rng batch_rng = Rng(config.seed).split("minibatch");
  Eigen::MatrixXd x0(data.data_dim(), config.batch_size), cond(data.cond_dim(), config.batch_size);
  for (long s = 0; s < config.steps; ++s) {
    for (int b = 0; b < config.batch_size; ++b) {
      const auto idx = static_cast<Eigen::Index>(batch_rng.below(static_cast<std::uint64_t>(data.size())));
      x0.col(b) = data.target.col(idx);
      cond.col(b) = data.cond.col(idx);
    }
    const double loss = trainer.step(x0, cond);
    if (on_step) on_step(s, loss);
  }
  return trainer;
}

Synthetic parse_synthetic(const std::string& name) {
  if (name == "mixture2") return Synthetic::mixture2;
  if (name == "rings") return Synthetic::rings;
  throw ParameterError("unknown synthetic dataset '" + name + "'");
}

Eigen::VectorXd synthetic_condition(int label) {
  if (label < 0 || label > 1) throw ParameterError("synthetic labels are 0 or 1");
  return label == 0 ? Eigen::Vector2d(1, 0) : Eigen::Vector2d(0, 1);
}

Eigen::MatrixXd sample_synthetic(Synthetic kind, int label, int count, Rng& rng) {
  if (label < 0 || label > 1) throw ParameterError("synthetic labels are 0 or 1");
  Eigen::MatrixXd x(2, count);
  for (int n = 0; n < count; ++n) {
    if (kind == Synthetic::mixture2) {
      // Label 0: modes at ±(1, 1); label 1: modes at ±(1, −1); std 0.2.
      const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
      const Eigen::Vector2d mean = label == 0 ? Eigen::Vector2d(1, 1) : Eigen::Vector2d(1, -1);
      x.col(n) = sign * mean + 0.2 * Eigen::Vector2d(rng.normal(), rng.normal());
    } else {
      const double radius = (label == 0 ? 0.5 : 1.2) + 0.05 * rng.normal();
      const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
      x.col(n) = radius * Eigen::Vector2d(std::cos(angle), std::sin(angle));
    }
  }
  return x;
}

Dataset make_synthetic_dataset(Synthetic kind, long count, Rng& rng) {
  Dataset d{Eigen::MatrixXd(2, count), Eigen::MatrixXd(2, count)};
  for (long n = 0; n < count; ++n) {
    const int label = static_cast<int>(n % 2);
    d.cond.col(n) = synthetic_condition(label);
    d.target.col(n) = sample_synthetic(kind, label, 1, rng).col(0);
  }
  return d;
}

double sliced_wasserstein(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, int projections, Rng& rng) {
  if (a.rows() != b.rows() || a.cols() != b.cols() || a.cols() == 0) {
    throw ParameterError("sliced_wasserstein needs equal-size, equal-dimension sample sets");
  }
  if (projections < 1) throw ParameterError("need at least one projection");
  const auto n = a.cols();
  std::vector<double> pa(static_cast<std::size_t>(n)), pb(static_cast<std::size_t>(n));
  double total = 0.0;
  for (int p = 0; p < projections; ++p) {
    Eigen::VectorXd dir(a.rows());
    for (auto& v : dir) v = rng.normal();
    dir.normalize();
    for (Eigen::Index i = 0; i < n; ++i) {
      pa[i] = dir.dot(a.col(i));
      pb[i] = dir.dot(b.col(i));
    }
    std::sort(pa.begin(), pa.end());
    std::sort(pb.begin(), pb.end());
    double w = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) w += std::abs(pa[i] - pb[i]);
    total += w / static_cast<double>(n);
  }
  return total / projections;
}

void save_model(const std::filesystem::path& path, const Trainer& trainer) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParameterError("cannot open " + path.string() + " for writing");
  const auto& s = trainer.schedule();
  const auto& c = trainer.model().config;
  io::write_magic(out, kModelMagic);
  io::write_u32(out, kModelVersion);
  io::write_u32(out, static_cast<std::uint32_t>(s.timesteps));
  io::write_f64(out, s.offset);
  io::write_f64(out, s.max_beta);
  io::write_u32(out, static_cast<std::uint32_t>(c.parameterization));
  io::write_u32(out, static_cast<std::uint32_t>(c.data_dim));
  io::write_u32(out, static_cast<std::uint32_t>(c.cond_dim));
  io::write_u32(out, static_cast<std::uint32_t>(c.time_dim));
  io::write_u64(out, static_cast<std::uint64_t>(trainer.steps_taken()));
  write_mlp(out, trainer.model().net);
  write_mlp(out, trainer.ema_model().net);
  if (!out) throw FormatError("failed writing " + path.string());
}

LoadedModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParameterError("cannot open " + path.string());
  io::expect_magic(in, kModelMagic);
  if (io::read_u32(in) != kModelVersion) throw FormatError("unsupported EDIF version");
  const auto T = static_cast<int>(io::read_u32(in));
  const double offset = io::read_f64(in), max_beta = io::read_f64(in);
  if (T < 1 || T > 100000) throw FormatError("implausible timestep count");
  LoadedModel m;
  m.schedule = cosine_schedule(T, offset, max_beta);
  DenoiserConfig c;
  const std::uint32_t param = io::read_u32(in);
  if (param > 1) throw FormatError("unknown parameterization");
  c.parameterization = static_cast<Parameterization>(param);
  c.data_dim = static_cast<int>(io::read_u32(in));
  c.cond_dim = static_cast<int>(io::read_u32(in));
  c.time_dim = static_cast<int>(io::read_u32(in));
  m.steps = static_cast<long>(io::read_u64(in));
  m.model.net = read_mlp(in);
  m.ema.net = read_mlp(in);
  c.hidden_widths.clear();
  for (std::size_t l = 0; l + 1 < m.model.net.layers.size(); ++l) c.hidden_widths.push_back(static_cast<int>(m.model.net.layers[l].weight.rows()));
  m.model.config = c;
  m.ema.config = c;
  if (m.model.net.input_width() != m.model.input_width() || m.model.net.output_width() != c.data_dim) {
    throw FormatError("denoiser shape does not match the EDIF header");
  }
  return m;
}

void save_dataset(const std::filesystem::path& path, const Dataset& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParameterError("cannot open " + path.string() + " for writing");
  io::write_magic(out, kDatasetMagic);
  io::write_u32(out, kDatasetVersion);
  io::write_u32(out, static_cast<std::uint32_t>(data.data_dim()));
  io::write_u32(out, static_cast<std::uint32_t>(data.cond_dim()));
  io::write_u64(out, static_cast<std::uint64_t>(data.size()));
  for (long n = 0; n < data.size(); ++n) {
    for (int r = 0; r < data.cond_dim(); ++r) io::write_f32(out, static_cast<float>(data.cond(r, n)));
    for (int r = 0; r < data.data_dim(); ++r) io::write_f32(out, static_cast<float>(data.target(r, n)));
  }
  if (!out) throw FormatError("failed writing " + path.string());
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParameterError("cannot open " + path.string());
  io::expect_magic(in, kDatasetMagic);
  if (io::read_u32(in) != kDatasetVersion) throw FormatError("unsupported EPRS version");
  const std::uint32_t d = io::read_u32(in), dc = io::read_u32(in);
  const std::uint64_t n = io::read_u64(in);
  if (d == 0 || d > 65536 || dc > 65536 || n > (1ull << 31)) throw FormatError("implausible EPRS header");
  Dataset data{Eigen::MatrixXd(dc, static_cast<Eigen::Index>(n)), Eigen::MatrixXd(d, static_cast<Eigen::Index>(n))};
  for (std::uint64_t i = 0; i < n; ++i) {
    for (std::uint32_t r = 0; r < dc; ++r) data.cond(r, static_cast<Eigen::Index>(i)) = io::read_f32(in);
    for (std::uint32_t r = 0; r < d; ++r) data.target(r, static_cast<Eigen::Index>(i)) = io::read_f32(in);
  }
  return data;
}

}  // namespace dreamvox::diffusion
