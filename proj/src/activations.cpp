#include "saf/activations.hpp"

#include <cmath>

namespace saf {
namespace {

// Typed kernels so that float tensors stay in float arithmetic.
template <class T>
T apply(Activation kind, T x) noexcept {
  switch (kind) {
    case Activation::Rbf1d:
      return std::exp(-x * x);
    case Activation::MRelu:
      if (x <= T{-1} || x >= T{1}) return T{0};
      return x < T{0} ? T{1} + x : T{1} - x;
    case Activation::Relu:
      return x > T{0} ? x : T{0};
    case Activation::Sigmoid:
      if (x >= T{0}) return T{1} / (T{1} + std::exp(-x));
      {
        const T e = std::exp(x);
        return e / (T{1} + e);
      }
  }
  return T{0};
}

template <class T>
T slope(Activation kind, T x) noexcept {
  switch (kind) {
    case Activation::Rbf1d:
      return T{-2} * x * std::exp(-x * x);
    case Activation::MRelu:
      if (x > T{-1} && x < T{0}) return T{1};
      if (x > T{0} && x < T{1}) return T{-1};
      return T{0};
    case Activation::Relu:
      return x > T{0} ? T{1} : T{0};
    case Activation::Sigmoid: {
      const T s = apply(Activation::Sigmoid, x);
      return s * (T{1} - s);
    }
  }
  return T{0};
}

}  // namespace

std::string to_string(Activation kind) {
  switch (kind) {
    case Activation::Rbf1d: return "rbf1d";
    case Activation::MRelu: return "mrelu";
    case Activation::Relu: return "relu";
    case Activation::Sigmoid: return "sigmoid";
  }
  return "unknown";
}

Activation activation_from_string(std::string_view name) {
  if (name == "rbf1d") return Activation::Rbf1d;
  if (name == "mrelu") return Activation::MRelu;
  if (name == "relu") return Activation::Relu;
  if (name == "sigmoid") return Activation::Sigmoid;
  throw ConfigError("unknown activation '" + std::string(name) + "'");
}

bool is_symmetric(Activation kind) { return kind == Activation::Rbf1d || kind == Activation::MRelu; }

double activate(Activation kind, double x) noexcept { return apply(kind, x); }

double activate_deriv(Activation kind, double x) noexcept { return slope(kind, x); }

template <class T>
Tensor<T> activate(Activation kind, const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  const T* in = x.raw();
  T* dst = out.raw();
  const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(x.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) dst[i] = apply(kind, in[i]);
  return out;
}

template <class T>
Tensor<T> activate_deriv(Activation kind, const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  const T* in = x.raw();
  T* dst = out.raw();
  const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(x.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) dst[i] = slope(kind, in[i]);
  return out;
}

template <class T>
Tensor<T> activate_backward(Activation kind, const Tensor<T>& x, const Tensor<T>& upstream) {
  require_shape(upstream.shape(), x.shape(), "activation backward upstream");
  Tensor<T> out(x.shape());
  const T* in = x.raw();
  const T* up = upstream.raw();
  T* dst = out.raw();
  const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(x.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) dst[i] = up[i] * slope(kind, in[i]);
  return out;
}

template Tensor<float> activate(Activation, const Tensor<float>&);
template Tensor<double> activate(Activation, const Tensor<double>&);
template Tensor<float> activate_deriv(Activation, const Tensor<float>&);
template Tensor<double> activate_deriv(Activation, const Tensor<double>&);
template Tensor<float> activate_backward(Activation, const Tensor<float>&, const Tensor<float>&);
template Tensor<double> activate_backward(Activation, const Tensor<double>&, const Tensor<double>&);

}  // namespace saf
