// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <iosfwd>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "dreamvox/rng.hpp"

namespace dreamvox {

enum class OutputActivation : std::uint32_t { identity = 0, sigmoid = 1 };

struct DenseLayer {
  Eigen::MatrixXf weight;  // out x in
  Eigen::VectorXf bias;    // out
};

/// Fully connected network, ReLU between layers. Parameters are stored in
/// single precision; evaluation runs in double.
struct MlpParams {
  std::vector<DenseLayer> layers;
  OutputActivation output = OutputActivation::identity;

  int input_width() const { return layers.empty() ? 0 : static_cast<int>(layers.front().weight.cols()); }
  int output_width() const { return layers.empty() ? 0 : static_cast<int>(layers.back().weight.rows()); }
  std::size_t parameter_count() const;

  /// Weight then bias of each layer, in layer order.
  std::vector<std::span<float>> tensors();
  std::vector<std::span<const float>> tensors() const;

  bool operator==(const MlpParams& other) const;
};

/// widths = {in, hidden..., out}. Weights ~ U(±sqrt(6 / (fan_in + fan_out))), biases zero.
MlpParams make_mlp(std::span<const int> widths, OutputActivation output, Rng& rng);

struct MlpGradients {
  std::vector<Eigen::MatrixXd> weight;
  std::vector<Eigen::VectorXd> bias;

  static MlpGradients zeros_like(const MlpParams& params);
  void set_zero();
  MlpGradients& operator+=(const MlpGradients& other);
  MlpGradients& operator*=(double s);
  std::vector<std::span<double>> tensors();
  std::vector<std::span<const double>> tensors() const;
  double squared_norm() const;
};

/// Batched evaluation; one sample per column.
class MlpEvaluator {
 public:
  explicit MlpEvaluator(const MlpParams& params);

  /// activations[0] is the input, activations[l + 1] the post-activation output of layer l.
  struct Trace {
    std::vector<Eigen::MatrixXd> activations;
  };

  Eigen::MatrixXd forward(const Eigen::MatrixXd& input, Trace* trace = nullptr) const;

  /// Accumulates dL/dparams for the traced batch into `grads`. If `input_grad`
  /// is non-null it receives dL/dinput.
  void backward(const Trace& trace, const Eigen::MatrixXd& output_grad, MlpGradients& grads,
                Eigen::MatrixXd* input_grad = nullptr) const;

  int input_width() const { return static_cast<int>(weights_.front().cols()); }
  int output_width() const { return static_cast<int>(weights_.back().rows()); }

 private:
  std::vector<Eigen::MatrixXd> weights_;
  std::vector<Eigen::VectorXd> biases_;
  OutputActivation output_;
};

/// u32 layer count, u32 output activation, then per layer u32 rows, u32 cols,
/// rows*cols f32 weights (row-major) and rows f32 biases.
void write_mlp(std::ostream& out, const MlpParams& params);
MlpParams read_mlp(std::istream& in);

}  // namespace dreamvox
