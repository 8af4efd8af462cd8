// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <fstream>
#include <numbers>
#include <numeric>

#include "dreamvox/diffusion.hpp"
#include "dreamvox/errors.hpp"
#include "support.hpp"

using namespace dreamvox;
using namespace dreamvox::diffusion;

TEST_CASE("cosine schedule values and invariants") {
  const Schedule s = cosine_schedule(100);
  REQUIRE(s.alpha_bar.size() == 101);
  CHECK(s.alpha_bar[0] == 1.0);
  CHECK(s.alpha_bar[1] == doctest::Approx(0.99936871840165847998).epsilon(1e-13));
  CHECK(s.alpha_bar[50] == doctest::Approx(0.49384359044063771332).epsilon(1e-13));
  CHECK(s.alpha_bar[99] == doctest::Approx(0.00024285722793500563036).epsilon(1e-11));
  CHECK(s.alpha_bar[100] == doctest::Approx(2.4285722793500563036e-7).epsilon(1e-11));
  CHECK(s.beta[50] == doctest::Approx(0.030593124281670354079).epsilon(1e-12));
  CHECK(s.beta[100] == 0.999);
  CHECK(s.alpha_bar[100] < 1e-2);
  double prod = 1.0;
  for (int t = 1; t <= 100; ++t) {
    CHECK(s.alpha_bar[t] < s.alpha_bar[t - 1]);
    CHECK(s.beta[t] > 0.0);
    CHECK(s.beta[t] < 1.0);
    CHECK(s.alpha(t) == doctest::Approx(1.0 - s.beta[t]));
    prod *= 1.0 - s.beta[t];
    CHECK(std::abs(prod - s.alpha_bar[t]) < 1e-10);
  }
  CHECK_THROWS_AS(cosine_schedule(0), ParameterError);
}

TEST_CASE("posterior coefficients") {
  const Schedule s = cosine_schedule(100);
  const PosteriorCoefficients p = posterior(s, 50);
  CHECK(p.x0_coef == doctest::Approx(0.043140060823766871131).epsilon(1e-12));
  CHECK(p.xt_coef == doctest::Approx(0.95426837201679023063).epsilon(1e-12));
  CHECK(p.variance == doctest::Approx(0.029651134380311130376).epsilon(1e-12));
  const PosteriorCoefficients first = posterior(s, 1);
  CHECK(first.x0_coef == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(first.xt_coef == 0.0);
  CHECK(first.variance == 0.0);
  CHECK_THROWS_AS(posterior(s, 0), ParameterError);
  CHECK_THROWS_AS(posterior(s, 101), ParameterError);
}

TEST_CASE("q_sample closed form and range checks") {
  const Schedule s = cosine_schedule(100);
  const Eigen::VectorXd x0 = Eigen::Vector3d(0.5, -1.0, 2.0);
  const Eigen::VectorXd noise = Eigen::Vector3d(0.1, 0.2, -0.3);
  CHECK(q_sample(x0, 0, noise, s) == x0);
  CHECK(q_sample(x0, 37, Eigen::VectorXd::Zero(3), s) == std::sqrt(s.alpha_bar[37]) * x0);
  CHECK_THROWS_AS(q_sample(x0, 101, noise, s), ParameterError);
  CHECK_THROWS_AS(q_sample(x0, -1, noise, s), ParameterError);
  CHECK_THROWS_AS(q_sample(x0, 3, Eigen::VectorXd::Zero(2), s), ParameterError);
}

TEST_CASE("q_sample marginal mean and variance (Monte Carlo)") {
  const Schedule s = cosine_schedule(100);
  Rng rng(1);
  const int n = 100000;
  for (int t : {10, 50, 90}) {
    // x0 ~ N(0.7, 1): E[x_t] = √ᾱ·0.7, Var[x_t] = ᾱ + (1 − ᾱ) = 1.
    double sum = 0, sq = 0;
    for (int k = 0; k < n; ++k) {
      Eigen::VectorXd x0(1), e(1);
      x0[0] = 0.7 + rng.normal();
      e[0] = rng.normal();
      const double x = q_sample(x0, t, e, s)[0];
      sum += x;
      sq += x * x;
    }
    const double mean = sum / n, var = sq / n - mean * mean;
    CHECK(std::abs(mean - std::sqrt(s.alpha_bar[t]) * 0.7) < 3.0 / std::sqrt(double(n)));
    CHECK(std::abs(var - 1.0) < 3.0 * std::sqrt(2.0 / n));
  }
}

TEST_CASE("timestep embedding") {
  const Eigen::VectorXd e = timestep_embedding(7, 4);
  CHECK(e[0] == doctest::Approx(std::sin(7.0)));
  CHECK(e[1] == doctest::Approx(std::sin(0.07)));
  CHECK(e[2] == doctest::Approx(std::cos(7.0)));
  CHECK(e[3] == doctest::Approx(std::cos(0.07)));
  CHECK_THROWS_AS(timestep_embedding(1, 3), ParameterError);
}

TEST_CASE("prediction loss stubs") {
  Rng rng(2);
  Eigen::MatrixXd x0(4, 64);
  for (Eigen::Index c = 0; c < x0.cols(); ++c) {
    for (auto& v : x0.col(c)) v = rng.normal();
    x0.col(c).normalize();
  }
  CHECK(prediction_loss(x0, x0) == 0.0);
  CHECK(prediction_loss(Eigen::MatrixXd::Zero(4, 64), x0) == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("training loss gradients match finite differences") {
  for (auto param : {Parameterization::x_start, Parameterization::epsilon}) {
    DenoiserConfig cfg;
    cfg.data_dim = 4;
    cfg.cond_dim = 3;
    cfg.time_dim = 8;
    cfg.hidden_widths = {12, 10};
    cfg.parameterization = param;
    Rng rng(3);
    Denoiser model = make_denoiser(cfg, rng);
    const Schedule s = cosine_schedule(100);
    Eigen::MatrixXd x0(4, 6), cond(3, 6);
    for (auto& v : x0.reshaped()) v = rng.normal();
    for (auto& v : cond.reshaped()) v = rng.normal();
    const TrainingDraw draw = draw_training_inputs(x0, s, rng);
    const LossAndGrad lg = training_loss(x0, cond, model, s, draw);
    auto params = model.net.tensors();
    const auto grads = std::as_const(lg.grads).tensors();
    for (std::size_t k = 0; k < params.size(); ++k) {
      for (std::size_t i = 0; i < params[k].size(); i += 2) {
        const float orig = params[k][i];
        params[k][i] = orig + 1e-4f;
        const double up = params[k][i];
        const double lp = training_loss(x0, cond, model, s, draw).loss;
        params[k][i] = orig - 1e-4f;
        const double down = params[k][i];
        const double lm = training_loss(x0, cond, model, s, draw).loss;
        params[k][i] = orig;
        const double fd = (lp - lm) / (up - down);
        if (std::abs(fd) < 1e-6 && std::abs(grads[k][i]) < 1e-6) continue;
        CHECK(testing::rel_err(grads[k][i], fd) < 1e-4);
      }
    }
  }
}

TEST_CASE("training loss is invariant under batch permutation") {
  DenoiserConfig cfg;
  cfg.hidden_widths = {16};
  Rng rng(4);
  const Denoiser model = make_denoiser(cfg, rng);
  const Schedule s = cosine_schedule(100);
  Eigen::MatrixXd x0(2, 9), cond(2, 9);
  for (auto& v : x0.reshaped()) v = rng.normal();
  for (auto& v : cond.reshaped()) v = rng.normal();
  const TrainingDraw draw = draw_training_inputs(x0, s, rng);
  std::vector<int> idx(9);
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng.engine());
  Eigen::MatrixXd px0(2, 9), pcond(2, 9);
  TrainingDraw pd = draw;
  for (int j = 0; j < 9; ++j) {
    px0.col(j) = x0.col(idx[j]);
    pcond.col(j) = cond.col(idx[j]);
    pd.noise.col(j) = draw.noise.col(idx[j]);
    pd.x_t.col(j) = draw.x_t.col(idx[j]);
    pd.t[j] = draw.t[idx[j]];
  }
  const LossAndGrad a = training_loss(x0, cond, model, s, draw);
  const LossAndGrad b = training_loss(px0, pcond, model, s, pd);
  CHECK(a.loss == doctest::Approx(b.loss).epsilon(1e-13));
  CHECK(std::abs(a.grads.squared_norm() - b.grads.squared_norm()) < 1e-12 * a.grads.squared_norm());
}

TEST_CASE("sampler fixed points and determinism") {
  const Schedule s = cosine_schedule(100);
  const Eigen::Vector2d c(0.3, -1.2);
  const X0Predictor constant = [&](const Eigen::MatrixXd& x, int) {
    Eigen::MatrixXd out(2, x.cols());
    out.colwise() = c;
    return out;
  };
  Rng rng(5);
  const Eigen::MatrixXd xs = sample(constant, 2, 1000, s, rng);
  const Eigen::Vector2d mean = xs.rowwise().mean();
  const double sd = std::sqrt((xs.colwise() - mean).squaredNorm() / (2.0 * 1000)) + 1e-12;
  CHECK((mean - c).cwiseAbs().maxCoeff() <= 3 * sd + 1e-12);
  CHECK((xs.colwise() - c).cwiseAbs().maxCoeff() < 1e-12);

  // Zero variance with an oracle that knows x0: the first reverse step already lands on it.
  const X0Predictor oracle = [&](const Eigen::MatrixXd& x, int) { return constant(x, 0); };
  Rng r2(6);
  const Eigen::MatrixXd z = sample(oracle, 2, 5, s, r2, SamplerOptions{true});
  CHECK((z.colwise() - c).cwiseAbs().maxCoeff() < 1e-12);

  DenoiserConfig cfg;
  cfg.hidden_widths = {16};
  Rng init(7);
  const Denoiser model = make_denoiser(cfg, init);
  Eigen::MatrixXd cond(2, 4);
  cond.setZero();
  cond.row(0).setOnes();
  Rng a(8), b(8);
  CHECK(sample(model, cond, s, a) == sample(model, cond, s, b));
}

TEST_CASE("trainer: ema warmup follows the copy-then-decay rule") {
  DenoiserConfig cfg;
  cfg.hidden_widths = {8};
  TrainConfig tc = desk_preset();
  tc.ema_update_after = 20;
  tc.ema_update_every = 10;
  Rng rng(9);
  Trainer trainer(make_denoiser(cfg, rng), tc);
  Rng data(10);
  Eigen::MatrixXd x0(2, 32), cond(2, 32);
  for (auto& v : x0.reshaped()) v = data.normal();
  cond.setZero();
  for (int s = 1; s <= 20; ++s) {
    trainer.step(x0, cond);
    if (s % 10 == 0) CHECK(trainer.ema_model().net == trainer.model().net);
  }
  const MlpParams before = trainer.ema_model().net;
  for (int s = 21; s <= 30; ++s) trainer.step(x0, cond);
  // Step 30: epoch = 30 − 20 − 1 = 9, decay = 1 − (1 + 9)^(−2/3).
  const double decay = 1.0 - std::pow(10.0, -2.0 / 3.0);
  const float expected = static_cast<float>(decay * before.layers[0].weight(0, 0) +
                                            (1 - decay) * trainer.model().net.layers[0].weight(0, 0));
  CHECK(trainer.ema_model().net.layers[0].weight(0, 0) == doctest::Approx(expected).epsilon(1e-6));
  CHECK(trainer.steps_taken() == 30);
}

TEST_CASE("gradient norm clipping") {
  DenoiserConfig cfg;
  cfg.hidden_widths = {8};
  Rng rng(11);
  const Denoiser model = make_denoiser(cfg, rng);
  MlpGradients g = MlpGradients::zeros_like(model.net);
  for (auto t : g.tensors()) std::fill(t.begin(), t.end(), 0.5);
  const double before = std::sqrt(g.squared_norm());
  MlpGradients small = g;
  small *= 0.1 / before;
  CHECK(clip_gradient_norm(g, 0.5) == doctest::Approx(before));
  CHECK(std::sqrt(g.squared_norm()) == doctest::Approx(0.5).epsilon(1e-5));
  const MlpGradients kept = small;
  clip_gradient_norm(small, 0.5);
  CHECK(small.squared_norm() == kept.squared_norm());
}

TEST_CASE("synthetic generators and sliced Wasserstein") {
  Rng rng(12);
  const Eigen::MatrixXd m0 = sample_synthetic(Synthetic::mixture2, 0, 20000, rng);
  int diag = 0;
  for (Eigen::Index n = 0; n < m0.cols(); ++n) diag += m0(0, n) * m0(1, n) > 0 ? 1 : 0;
  CHECK(diag > 19900);
  CHECK(std::abs(m0.row(0).mean()) < 0.05);
  const Eigen::MatrixXd ring = sample_synthetic(Synthetic::rings, 1, 5000, rng);
  CHECK(ring.colwise().norm().mean() == doctest::Approx(1.2).epsilon(0.01));
  CHECK(synthetic_condition(1) == Eigen::Vector2d(0, 1));
  CHECK_THROWS_AS(synthetic_condition(2), ParameterError);
  CHECK_THROWS_AS(parse_synthetic("spiral"), ParameterError);

  Rng p(13);
  CHECK(sliced_wasserstein(m0, m0, 50, p) == 0.0);
  Eigen::MatrixXd shifted = m0;
  shifted.row(0).array() += 0.3;
  // Projections of a shift δ·e_x onto random unit directions average δ·E|cos θ| = δ·2/π.
  const double sw = sliced_wasserstein(m0, shifted, 4000, p);
  CHECK(sw == doctest::Approx(0.3 * 2 / std::numbers::pi).epsilon(0.03));
}

TEST_CASE("model and dataset files round trip") {
  testing::TempDir dir("edif");
  Rng rng(14);
  const Dataset d = make_synthetic_dataset(Synthetic::rings, 50, rng);
  save_dataset(dir / "d.eprs", d);
  const Dataset back = load_dataset(dir / "d.eprs");
  CHECK(back.cond == d.cond.cast<float>().cast<double>());
  CHECK(back.target == d.target.cast<float>().cast<double>());

  TrainConfig tc = desk_preset();
  tc.steps = 25;
  tc.batch_size = 16;
  const Trainer trainer = train(d, desk_denoiser(2, 2), tc);
  save_model(dir / "m.edif", trainer);
  const LoadedModel m = load_model(dir / "m.edif");
  CHECK(m.model.net == trainer.model().net);
  CHECK(m.ema.net == trainer.ema_model().net);
  CHECK(m.steps == 25);
  CHECK(m.schedule.alpha_bar == trainer.schedule().alpha_bar);
  CHECK(m.model.config.hidden_widths == trainer.model().config.hidden_widths);

  std::ofstream(dir / "bad.eprs", std::ios::binary) << "EPRX";
  CHECK_THROWS_AS(load_dataset(dir / "bad.eprs"), FormatError);
}

TEST_CASE("presets carry the reference training constants") {
  const TrainConfig p = paper_preset();
  CHECK(p.timesteps == 100);
  CHECK(p.lr == 1.1e-4);
  CHECK(p.weight_decay == 6.02e-2);
  CHECK(p.max_grad_norm == 0.5);
  CHECK(p.batch_size == 1024);
  CHECK(p.ema_beta == 0.9999);
  CHECK(p.ema_update_every == 10);
  const DenoiserConfig d = paper_denoiser(512, 512);
  CHECK(d.hidden_widths == std::vector<int>(6, 512));
  CHECK(d.parameterization == Parameterization::x_start);

  const TrainConfig desk = desk_preset();
  TrainConfig same = p;
  same.steps = desk.steps;
  CHECK(desk.lr == same.lr);
  CHECK(desk.weight_decay == same.weight_decay);
  CHECK(desk.max_grad_norm == same.max_grad_norm);
  CHECK(desk.batch_size == same.batch_size);
  CHECK(desk.timesteps == same.timesteps);
  CHECK(desk.ema_beta == same.ema_beta);
  CHECK(desk.steps < p.steps);
}
