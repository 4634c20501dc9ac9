#pragma once

#include <string>
#include <string_view>

#include "saf/tensor.hpp"

namespace saf {

/// RBF1D and MRELU are the symmetric activations (reflection-symmetric about 0,
/// outputs in [0, 1], maximal only at 0). RELU and SIGMOID serve the plain baselines.
enum class Activation { Rbf1d, MRelu, Relu, Sigmoid };

std::string to_string(Activation kind);
Activation activation_from_string(std::string_view name);
bool is_symmetric(Activation kind);

// Scalar forms.

/// exp(-x^2)
inline double rbf1d(double x) noexcept;
/// -2x exp(-x^2)
inline double rbf1d_deriv(double x) noexcept;
/// Tent function: 1 - |x| on (-1, 1), 0 elsewhere; equals min(relu(1 - x), relu(1 + x)).
inline double mrelu(double x) noexcept;
/// +1 on (-1, 0), -1 on (0, 1), 0 elsewhere including the kinks {-1, 0, 1}.
inline double mrelu_deriv(double x) noexcept;
inline double relu(double x) noexcept;
/// 0 at x = 0.
inline double relu_deriv(double x) noexcept;
inline double sigmoid(double x) noexcept;
inline double sigmoid_deriv(double x) noexcept;

double activate(Activation kind, double x) noexcept;
double activate_deriv(Activation kind, double x) noexcept;

// Elementwise tensor forms.

template <class T>
Tensor<T> activate(Activation kind, const Tensor<T>& x);

template <class T>
Tensor<T> activate_deriv(Activation kind, const Tensor<T>& x);

/// upstream * f'(x), elementwise.
template <class T>
Tensor<T> activate_backward(Activation kind, const Tensor<T>& x, const Tensor<T>& upstream);

template <class T>
Tensor<T> rbf1d(const Tensor<T>& x) { return activate(Activation::Rbf1d, x); }
template <class T>
Tensor<T> rbf1d_deriv(const Tensor<T>& x) { return activate_deriv(Activation::Rbf1d, x); }
template <class T>
Tensor<T> mrelu(const Tensor<T>& x) { return activate(Activation::MRelu, x); }
template <class T>
Tensor<T> mrelu_deriv(const Tensor<T>& x) { return activate_deriv(Activation::MRelu, x); }

}  // namespace saf

#include "saf/activations_inl.hpp"
