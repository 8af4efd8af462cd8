// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dreamvox/errors.hpp"

namespace dreamvox {

struct AdamHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled (AdamW)
};

/// Moments are stored at the parameter precision so a checkpoint of
/// (params, state) resumes bit-exactly.
template <class Scalar>
struct AdamState {
  std::vector<Scalar> m;
  std::vector<Scalar> v;
  std::int64_t t = 0;

  static AdamState zeros(std::size_t n) { return {std::vector<Scalar>(n, Scalar(0)), std::vector<Scalar>(n, Scalar(0)), 0}; }
  bool operator==(const AdamState&) const = default;
};

inline std::size_t total_size(const auto& tensors) {
  std::size_t n = 0;
  for (const auto& t : tensors) n += t.size();
  return n;
}

/// One bias-corrected Adam update over a list of tensors sharing one state.
template <class Scalar>
void adam_step(const std::vector<std::span<Scalar>>& params, const std::vector<std::span<const double>>& grads,
               AdamState<Scalar>& state, const AdamHyper& hyper) {
  if (params.size() != grads.size()) throw ParameterError("adam_step: parameter/gradient list lengths differ");
  const std::size_t n = total_size(params);
  if (state.m.size() != n || state.v.size() != n) throw ParameterError("adam_step: state shape does not match parameters");
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (params[k].size() != grads[k].size()) throw ParameterError("adam_step: tensor " + std::to_string(k) + " shape mismatch");
    for (std::size_t i = 0; i < grads[k].size(); ++i) {
      if (!std::isfinite(grads[k][i])) {
        throw NumericalError("adam_step: non-finite gradient in tensor " + std::to_string(k) + " at element " +
                             std::to_string(i) + " (step " + std::to_string(state.t + 1) + ")");
      }
    }
  }
  state.t += 1;
  const double bc1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(state.t));
  std::size_t offset = 0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    for (std::size_t i = 0; i < params[k].size(); ++i, ++offset) {
      const double g = grads[k][i];
      const auto m = static_cast<Scalar>(hyper.beta1 * static_cast<double>(state.m[offset]) + (1.0 - hyper.beta1) * g);
      const auto v = static_cast<Scalar>(hyper.beta2 * static_cast<double>(state.v[offset]) + (1.0 - hyper.beta2) * g * g);
      state.m[offset] = m;
      state.v[offset] = v;
      const double m_hat = static_cast<double>(m) / bc1;
      const double v_hat = static_cast<double>(v) / bc2;
      double p = static_cast<double>(params[k][i]);
      p -= hyper.lr * (m_hat / (std::sqrt(v_hat) + hyper.eps) + hyper.weight_decay * p);
      params[k][i] = static_cast<Scalar>(p);
    }
  }
}

template <class Scalar>
void adam_step(std::span<Scalar> params, std::span<const double> grads, AdamState<Scalar>& state, const AdamHyper& hyper) {
  adam_step<Scalar>(std::vector<std::span<Scalar>>{params}, std::vector<std::span<const double>>{grads}, state, hyper);
}

}  // namespace dreamvox
