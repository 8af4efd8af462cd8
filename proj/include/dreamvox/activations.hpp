// SPDX-License-Identifier: Apache-2.0
// Numerically careful scalar activations.
#pragma once

#include <cmath>
#include <limits>

namespace dreamvox {

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// ln(1 + e^x)
inline double softplus(double x) {
  if (x > 0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

/// ln(e^x − 1); −inf at x = 0, NaN below.
inline double softplus_inverse(double x) {
  if (x > 30.0) return x + std::log1p(-std::exp(-x));
  return std::log(std::expm1(x));
}

}  // namespace dreamvox
