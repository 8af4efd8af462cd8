// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <sstream>

#include "dreamvox/errors.hpp"
#include "dreamvox/mlp.hpp"
#include "support.hpp"

using namespace dreamvox;

namespace {

double objective(const MlpParams& p, const Eigen::MatrixXd& x, const Eigen::MatrixXd& w) {
  return (MlpEvaluator(p).forward(x).array() * w.array()).sum();
}

}  // namespace

TEST_CASE("xavier init bounds and zero biases") {
  Rng rng(1);
  const std::vector<int> widths{27, 64, 64, 3};
  const MlpParams p = make_mlp(widths, OutputActivation::sigmoid, rng);
  REQUIRE(p.layers.size() == 3);
  CHECK(p.parameter_count() == 27 * 64 + 64 + 64 * 64 + 64 + 64 * 3 + 3);
  for (const auto& layer : p.layers) {
    const double bound = std::sqrt(6.0 / double(layer.weight.rows() + layer.weight.cols()));
    CHECK(layer.weight.cwiseAbs().maxCoeff() <= bound);
    CHECK(layer.weight.cwiseAbs().maxCoeff() > 0.9 * bound);
    CHECK(layer.bias.isZero());
  }
  Rng again(1);
  CHECK(make_mlp(widths, OutputActivation::sigmoid, again) == p);
}

TEST_CASE("mlp backward matches finite differences") {
  for (auto act : {OutputActivation::identity, OutputActivation::sigmoid}) {
    Rng rng(2);
    const std::vector<int> widths{5, 7, 6, 3};
    MlpParams p = make_mlp(widths, act, rng);
    for (auto t : p.tensors())
      for (float& v : t) v += static_cast<float>(rng.uniform(-0.3, 0.3));
    Eigen::MatrixXd x(5, 4), w(3, 4);
    for (auto& v : x.reshaped()) v = rng.uniform(-1, 1);
    for (auto& v : w.reshaped()) v = rng.uniform(-1, 1);

    const MlpEvaluator net(p);
    MlpEvaluator::Trace trace;
    net.forward(x, &trace);
    MlpGradients g = MlpGradients::zeros_like(p);
    Eigen::MatrixXd dx;
    net.backward(trace, w, g, &dx);

    auto params = p.tensors();
    const auto grads = std::as_const(g).tensors();
    for (std::size_t k = 0; k < params.size(); ++k) {
      for (std::size_t i = 0; i < params[k].size(); i += 3) {
        const float orig = params[k][i];
        params[k][i] = orig + 1e-3f;
        const double up = params[k][i];
        const double fp = objective(p, x, w);
        params[k][i] = orig - 1e-3f;
        const double down = params[k][i];
        const double fm = objective(p, x, w);
        params[k][i] = orig;
        const double fd = (fp - fm) / (up - down);
        // Central differences of a piecewise-quadratic map: tolerance covers the O(h²) curvature term.
        CHECK(std::abs(grads[k][i] - fd) < 1e-4 * std::max(1.0, std::abs(fd)));
      }
    }
    const double h = 1e-5;
    for (int r = 0; r < 5; ++r) {
      Eigen::MatrixXd xp = x, xm = x;
      xp(r, 1) += h;
      xm(r, 1) -= h;
      const double fd = (objective(p, xp, w) - objective(p, xm, w)) / (2 * h);
      CHECK(std::abs(dx(r, 1) - fd) < 1e-7);
    }
  }
}

TEST_CASE("gradient containers accumulate") {
  Rng rng(3);
  const std::vector<int> widths{2, 3, 1};
  const MlpParams p = make_mlp(widths, OutputActivation::identity, rng);
  MlpGradients a = MlpGradients::zeros_like(p);
  a.weight[0].setConstant(1.0);
  MlpGradients b = a;
  a += b;
  a *= 0.5;
  CHECK(a.weight[0].isApprox(b.weight[0]));
  CHECK(a.squared_norm() == doctest::Approx(6.0));
  a.set_zero();
  CHECK(a.squared_norm() == 0.0);
}

TEST_CASE("mlp serialization round trip") {
  Rng rng(4);
  const std::vector<int> widths{9, 4, 2};
  const MlpParams p = make_mlp(widths, OutputActivation::sigmoid, rng);
  std::stringstream ss;
  write_mlp(ss, p);
  CHECK(read_mlp(ss) == p);
  std::string bytes = ss.str();
  std::istringstream truncated(bytes.substr(0, bytes.size() - 2));
  CHECK_THROWS_AS(read_mlp(truncated), FormatError);
}
