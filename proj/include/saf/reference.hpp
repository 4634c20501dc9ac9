#pragma once

// Serial, loop-per-definition versions of the hot kernels. They are kept for
// testing the parallel kernels and as the benchmark baseline; nothing on the
// training path calls them.

#include <cstddef>

#include "saf/kernels.hpp"

namespace saf::reference {

template <class T>
void gemm(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c);

/// Direct quadruple loop over (output channel, position, input channel, tap).
template <class T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& bias,
                         std::size_t stride, std::size_t pad);

template <class T>
LayerGrad<T> conv2d_backward(const Tensor<T>& input, const Tensor<T>& weights,
                             const Tensor<T>& upstream, std::size_t stride, std::size_t pad);

template <class T>
Tensor<T> maxpool_forward(const Tensor<T>& input, std::size_t window, std::size_t stride);

template <class T>
Tensor<T> avgpool_forward(const Tensor<T>& input, std::size_t window, std::size_t stride);

template <class T>
Tensor<T> linear_forward(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& bias);

}  // namespace saf::reference
