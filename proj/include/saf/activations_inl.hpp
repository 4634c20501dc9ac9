#pragma once

#include <cmath>

namespace saf {

inline double rbf1d(double x) noexcept { return std::exp(-x * x); }

inline double rbf1d_deriv(double x) noexcept { return -2.0 * x * std::exp(-x * x); }

inline double mrelu(double x) noexcept {
  if (x <= -1.0 || x >= 1.0) return 0.0;
  return x < 0.0 ? 1.0 + x : 1.0 - x;
}

inline double mrelu_deriv(double x) noexcept {
  if (x > -1.0 && x < 0.0) return 1.0;
  if (x > 0.0 && x < 1.0) return -1.0;
  return 0.0;
}

inline double relu(double x) noexcept { return x > 0.0 ? x : 0.0; }

inline double relu_deriv(double x) noexcept { return x > 0.0 ? 1.0 : 0.0; }

inline double sigmoid(double x) noexcept {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double sigmoid_deriv(double x) noexcept {
  const double s = sigmoid(x);
  return s * (1.0 - s);
}

}  // namespace saf
