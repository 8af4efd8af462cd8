// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include "dreamvox/errors.hpp"
#include "dreamvox/guidance.hpp"
#include "dreamvox/losses.hpp"
#include "support.hpp"

using namespace dreamvox;

TEST_CASE("transmittance loss: clamp, gradient, monotone sweep") {
  const std::vector<double> clear(12, 1.0);
  MapLoss l = transmittance_loss(clear, 0.88);
  CHECK(l.loss == doctest::Approx(-0.88));
  for (double g : l.grad) CHECK(g == 0.0);

  const std::vector<double> half{0.2, 0.8, 0.4, 0.6};
  l = transmittance_loss(half, 0.88);
  CHECK(l.loss == doctest::Approx(-0.5));
  for (double g : l.grad) CHECK(g == doctest::Approx(-0.25));

  double prev = 1e9;
  for (double m = 0.0; m <= 1.0; m += 0.01) {
    const double v = transmittance_loss(std::vector<double>(5, m), 0.88).loss;
    CHECK(v <= prev + 1e-15);
    if (m >= 0.88) CHECK(v == doctest::Approx(-0.88));
    prev = v;
  }
  const MapLoss above = transmittance_loss(std::vector<double>{0.95, 0.9, 0.99}, 0.88);
  for (double g : above.grad) CHECK(g == 0.0);
}

TEST_CASE("annealed transmittance target") {
  CHECK(annealed_tau(0, 0.4, 0.88, 500) == doctest::Approx(0.4));
  CHECK(annealed_tau(250, 0.4, 0.88, 500) == doctest::Approx(0.64));
  CHECK(annealed_tau(500, 0.4, 0.88, 500) == doctest::Approx(0.88));
  CHECK(annealed_tau(4000, 0.4, 0.88, 500) == doctest::Approx(0.88));
  CHECK(annealed_tau(3, 0.4, 0.88, 0) == doctest::Approx(0.88));
}

TEST_CASE("loss weight validation") {
  LossWeights w;
  w.prior = -1;
  CHECK_THROWS_AS(validate_weights(w), ParameterError);
  w = LossWeights{};
  w.tau_target = 1.0;
  CHECK_THROWS_AS(validate_weights(w), ParameterError);
}

TEST_CASE("prior loss: opaque interior, empty interior, lattice mismatch") {
  const SdfGrid sdf = testing::sphere_grid(10, 0.6);
  long interior = 0;
  for (float v : sdf.values) interior += v < 0 ? 1 : 0;
  VoxelField f = init_from_prior(sdf, 0.05, 1e-6, {}, 1);
  for (float& v : f.density) v = 1e4f;
  CHECK(prior_preserving_loss(f, sdf).loss == doctest::Approx(-double(interior)).epsilon(1e-12));

  SdfGrid outside = sdf;
  for (float& v : outside.values) v = std::abs(v) + 0.01f;
  const VoxelField r = testing::random_field(10, 2);
  const MapLoss none = prior_preserving_loss(r, outside);
  CHECK(none.loss == 0.0);
  for (double g : none.grad) CHECK(g == 0.0);

  CHECK_THROWS_AS(prior_preserving_loss(r, testing::sphere_grid(11, 0.6)), ParameterError);
}

TEST_CASE("prior loss gradient, support and monotonicity") {
  const SdfGrid sdf = testing::sphere_grid(8, 0.7);
  VoxelField f = testing::random_field(8, 3);
  const MapLoss l = prior_preserving_loss(f, sdf);
  for (std::size_t n = 0; n < f.density.size(); ++n) {
    if (sdf.values[n] >= 0) {
      CHECK(l.grad[n] == 0.0);
      continue;
    }
    CHECK(l.grad[n] < 0.0);
    const float orig = f.density[n];
    f.density[n] = orig + 1e-3f;
    const double up = f.density[n];
    const double lp = prior_preserving_loss(f, sdf).loss;
    f.density[n] = orig - 1e-3f;
    const double down = f.density[n];
    const double lm = prior_preserving_loss(f, sdf).loss;
    f.density[n] = orig;
    CHECK(testing::rel_err(l.grad[n], (lp - lm) / (up - down)) < 1e-5);
    f.density[n] = orig + 0.5f;
    CHECK(prior_preserving_loss(f, sdf).loss <= l.loss);
    f.density[n] = orig;
  }
  CHECK(interior_mean_opacity(f, sdf) == doctest::Approx(-l.loss / std::count_if(sdf.values.begin(), sdf.values.end(),
                                                                                  [](float v) { return v < 0; })));
}

namespace {

struct Scene {
  VoxelField field;
  SdfGrid prior;
  Camera camera;
  RenderSettings settings;
  ImageRgb background;
  ImageRgb target;
};

Scene make_scene() {
  Scene s{testing::random_field(16, 4), testing::sphere_grid(16, 0.6), orbit_camera(35, 26, 2.5, 40, 16, 16), {}, {}, {}};
  s.settings.samples_per_ray = 32;
  s.settings.threads = 1;
  Rng rng(5);
  s.background = make_background(BackgroundMode::checkerboard, 16, 16, rng);
  s.target = ImageRgb(16, 16);
  for (double& v : s.target.data) v = rng.uniform();
  return s;
}

double scene_loss(const Scene& s, const LossWeights& w, TotalLoss* out = nullptr, RenderOutput* render_out = nullptr) {
  RenderOutput r = render(s.field, s.camera, s.settings);
  const GuidanceResult g = photometric_guidance(composite_background(r, s.background), s.target);
  TotalLoss t = total_loss(s.field, r, g, &s.prior, w);
  if (out) *out = t;
  if (render_out) *render_out = std::move(r);
  return t.breakdown.total;
}

}  // namespace

TEST_CASE("total loss: zero weights, guidance only, additivity") {
  Scene s = make_scene();
  LossWeights zero{0, 0, 0, 0.88};
  TotalLoss t;
  RenderOutput r;
  CHECK(scene_loss(s, zero, &t, &r) == 0.0);
  FieldGradients g = total_loss_backward(r, s.background, t);
  for (double v : g.density) CHECK(v == 0.0);
  CHECK(g.color.squared_norm() == 0.0);

  const GuidanceResult guided = photometric_guidance(composite_background(r, s.background), s.target);
  CHECK(scene_loss(s, LossWeights{1, 0, 0, 0.88}) == guided.loss);

  const LossWeights w{0.7, 0.3, 2e-3, 0.95};
  const double combined = scene_loss(s, w, &t);
  const double parts = 0.7 * scene_loss(s, {1, 0, 0, 0.95}) + 0.3 * scene_loss(s, {0, 1, 0, 0.95}) +
                       2e-3 * scene_loss(s, {0, 0, 1, 0.95});
  CHECK(std::abs(combined - parts) < 1e-12);
  CHECK(t.breakdown.total == doctest::Approx(0.7 * t.breakdown.guidance + 0.3 * t.breakdown.transmittance +
                                             2e-3 * t.breakdown.prior).epsilon(1e-14));
}

TEST_CASE("total loss gradient matches finite differences end to end") {
  Scene s = make_scene();
  const LossWeights w{1.0, 0.5, 1e-3, 0.97};
  TotalLoss t;
  RenderOutput r;
  scene_loss(s, w, &t, &r);
  double mean_T = 0;
  for (double v : r.transmittance) mean_T += v / double(r.transmittance.size());
  REQUIRE(mean_T < 0.9);  // the transmittance term is active
  const FieldGradients g = total_loss_backward(r, s.background, t);

  Rng rng(6);
  int checked = 0;
  while (checked < 20) {
    const std::size_t n = rng.below(s.field.density.size());
    if (std::abs(g.density[n]) < 1e-7) continue;
    const float orig = s.field.density[n];
    s.field.density[n] = orig + 1e-3f;
    const double up = s.field.density[n];
    const double lp = scene_loss(s, w);
    s.field.density[n] = orig - 1e-3f;
    const double down = s.field.density[n];
    const double lm = scene_loss(s, w);
    s.field.density[n] = orig;
    CHECK(testing::rel_err(g.density[n], (lp - lm) / (up - down)) < 1e-4);
    ++checked;
  }
}
