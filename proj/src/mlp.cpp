// SPDX-License-Identifier: Apache-2.0
#include "dreamvox/mlp.hpp"

#include <cmath>

#include "dreamvox/binary_io.hpp"
#include "dreamvox/errors.hpp"

namespace dreamvox {

std::size_t MlpParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  return n;
}

std::vector<std::span<float>> MlpParams::tensors() {
  std::vector<std::span<float>> out;
  for (auto& l : layers) {
    out.emplace_back(l.weight.data(), static_cast<std::size_t>(l.weight.size()));
    out.emplace_back(l.bias.data(), static_cast<std::size_t>(l.bias.size()));
  }
  return out;
}

std::vector<std::span<const float>> MlpParams::tensors() const {
  std::vector<std::span<const float>> out;
  for (const auto& l : layers) {
    out.emplace_back(l.weight.data(), static_cast<std::size_t>(l.weight.size()));
    out.emplace_back(l.bias.data(), static_cast<std::size_t>(l.bias.size()));
  }
  return out;
}

bool MlpParams::operator==(const MlpParams& other) const {
  if (output != other.output || layers.size() != other.layers.size()) return false;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& a = layers[i];
    const auto& b = other.layers[i];
    if (a.weight.rows() != b.weight.rows() || a.weight.cols() != b.weight.cols()) return false;
    if (a.weight != b.weight || a.bias != b.bias) return false;
  }
  return true;
}

MlpParams make_mlp(std::span<const int> widths, OutputActivation output, Rng& rng) {
  if (widths.size() < 2) throw ParameterError("an MLP needs at least input and output widths");
  MlpParams params;
  params.output = output;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const int in = widths[l], out = widths[l + 1];
    if (in <= 0 || out <= 0) throw ParameterError("MLP widths must be positive");
    const double limit = std::sqrt(6.0 / (in + out));
    DenseLayer layer{Eigen::MatrixXf(out, in), Eigen::VectorXf::Zero(out)};
    for (int c = 0; c < in; ++c)
      for (int r = 0; r < out; ++r) layer.weight(r, c) = static_cast<float>(rng.uniform(-limit, limit));
    params.layers.push_back(std::move(layer));
  }
  return params;
}

MlpGradients MlpGradients::zeros_like(const MlpParams& params) {
  MlpGradients g;
  for (const auto& l : params.layers) {
    g.weight.push_back(Eigen::MatrixXd::Zero(l.weight.rows(), l.weight.cols()));
    g.bias.push_back(Eigen::VectorXd::Zero(l.bias.size()));
  }
  return g;
}

void MlpGradients::set_zero() {
  for (auto& w : weight) w.setZero();
  for (auto& b : bias) b.setZero();
}

MlpGradients& MlpGradients::operator+=(const MlpGradients& other) {
  for (std::size_t l = 0; l < weight.size(); ++l) {
    weight[l] += other.weight[l];
    bias[l] += other.bias[l];
  }
  return *this;
}

MlpGradients& MlpGradients::operator*=(double s) {
  for (std::size_t l = 0; l < weight.size(); ++l) {
    weight[l] *= s;
    bias[l] *= s;
  }
  return *this;
}

std::vector<std::span<double>> MlpGradients::tensors() {
  std::vector<std::span<double>> out;
  for (std::size_t l = 0; l < weight.size(); ++l) {
    out.emplace_back(weight[l].data(), static_cast<std::size_t>(weight[l].size()));
    out.emplace_back(bias[l].data(), static_cast<std::size_t>(bias[l].size()));
  }
  return out;
}

std::vector<std::span<const double>> MlpGradients::tensors() const {
  std::vector<std::span<const double>> out;
  for (std::size_t l = 0; l < weight.size(); ++l) {
    out.emplace_back(weight[l].data(), static_cast<std::size_t>(weight[l].size()));
    out.emplace_back(bias[l].data(), static_cast<std::size_t>(bias[l].size()));
  }
  return out;
}

double MlpGradients::squared_norm() const {
  double s = 0;
  for (std::size_t l = 0; l < weight.size(); ++l) s += weight[l].squaredNorm() + bias[l].squaredNorm();
  return s;
}

MlpEvaluator::MlpEvaluator(const MlpParams& params) : output_(params.output) {
  if (params.layers.empty()) throw ParameterError("empty MLP");
  for (const auto& l : params.layers) {
    weights_.push_back(l.weight.cast<double>());
    biases_.push_back(l.bias.cast<double>());
  }
}

Eigen::MatrixXd MlpEvaluator::forward(const Eigen::MatrixXd& input, Trace* trace) const {
  if (input.rows() != input_width()) throw ParameterError("MLP input width mismatch");
  if (trace) {
    trace->activations.clear();
    trace->activations.push_back(input);
  }
  Eigen::MatrixXd x = input;
  const std::size_t n_layers = weights_.size();
  for (std::size_t l = 0; l < n_layers; ++l) {
    Eigen::MatrixXd z = weights_[l] * x;
    z.colwise() += biases_[l];
    if (l + 1 < n_layers) {
      z = z.cwiseMax(0.0);
    } else if (output_ == OutputActivation::sigmoid) {
      z = z.unaryExpr([](double v) { return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); });
    }
    if (trace) trace->activations.push_back(z);
    x = std::move(z);
  }
  return x;
}

void MlpEvaluator::backward(const Trace& trace, const Eigen::MatrixXd& output_grad, MlpGradients& grads,
                            Eigen::MatrixXd* input_grad) const {
  const std::size_t n_layers = weights_.size();
  Eigen::MatrixXd delta = output_grad;
  for (std::size_t l = n_layers; l-- > 0;) {
    const Eigen::MatrixXd& y = trace.activations[l + 1];
    if (l + 1 < n_layers) {
      delta = (y.array() > 0.0).select(delta, 0.0);
    } else if (output_ == OutputActivation::sigmoid) {
      delta = delta.cwiseProduct(y.cwiseProduct((1.0 - y.array()).matrix()));
    }
    const Eigen::MatrixXd& x = trace.activations[l];
    grads.weight[l].noalias() += delta * x.transpose();
    grads.bias[l] += delta.rowwise().sum();
    if (l > 0 || input_grad) {
      Eigen::MatrixXd prev = weights_[l].transpose() * delta;
      delta = std::move(prev);
    }
  }
  if (input_grad) *input_grad = std::move(delta);
}

void write_mlp(std::ostream& out, const MlpParams& params) {
  io::write_u32(out, static_cast<std::uint32_t>(params.layers.size()));
  io::write_u32(out, static_cast<std::uint32_t>(params.output));
  for (const auto& l : params.layers) {
    io::write_u32(out, static_cast<std::uint32_t>(l.weight.rows()));
    io::write_u32(out, static_cast<std::uint32_t>(l.weight.cols()));
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) io::write_f32(out, l.weight(r, c));
    io::write_f32_array(out, std::span<const float>(l.bias.data(), static_cast<std::size_t>(l.bias.size())));
  }
}

MlpParams read_mlp(std::istream& in) {
  MlpParams params;
  const std::uint32_t n_layers = io::read_u32(in);
  if (n_layers == 0 || n_layers > 64) throw FormatError("implausible MLP layer count");
  const std::uint32_t act = io::read_u32(in);
  if (act > 1) throw FormatError("unknown MLP output activation");
  params.output = static_cast<OutputActivation>(act);
  for (std::uint32_t l = 0; l < n_layers; ++l) {
    const std::uint32_t rows = io::read_u32(in), cols = io::read_u32(in);
    if (rows == 0 || cols == 0 || rows > 65536 || cols > 65536) throw FormatError("implausible MLP layer shape");
    if (!params.layers.empty() && params.layers.back().weight.rows() != cols) {
      throw FormatError("MLP layer widths do not chain");
    }
    DenseLayer layer{Eigen::MatrixXf(rows, cols), Eigen::VectorXf(rows)};
    for (std::uint32_t r = 0; r < rows; ++r)
      for (std::uint32_t c = 0; c < cols; ++c) layer.weight(r, c) = io::read_f32(in);
    const auto bias = io::read_f32_array(in, rows);
    for (std::uint32_t r = 0; r < rows; ++r) layer.bias(r) = bias[r];
    params.layers.push_back(std::move(layer));
  }
  return params;
}

}  // namespace dreamvox
