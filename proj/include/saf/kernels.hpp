#pragma once

// Forward/backward kernels for every layer kind the model zoo uses.
//
// All kernels are pure functions of their arguments (batch-norm forward in
// training mode additionally updates the running statistics it is handed).
// Parallel loops partition the *outputs*, so results are identical for any
// OpenMP thread count. Serial reference versions live in reference.hpp.

#include <cstddef>
#include <vector>

#include "saf/tensor.hpp"

namespace saf {

template <class T>
struct LayerGrad {
  Tensor<T> input_grad;
  std::vector<Tensor<T>> param_grads;  // aligned with the layer's parameter list
};

/// Which gradients a backward call should produce. Attacks need only the input
/// gradient; skipping the parameter gradients halves the cost.
struct GradRequest {
  bool input = true;
  bool params = true;
};

enum class Mode { Train, Eval };

std::size_t conv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad);

// Cross-correlation. input (N, C, H, W), weights (OC, C, KH, KW), bias (OC).
template <class T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& bias,
                         std::size_t stride, std::size_t pad);

/// param_grads = {d weights, d bias}.
template <class T>
LayerGrad<T> conv2d_backward(const Tensor<T>& input, const Tensor<T>& weights,
                             const Tensor<T>& upstream, std::size_t stride, std::size_t pad,
                             GradRequest request = {});

// Pooling over non-padded windows; window must fit in both spatial extents.
template <class T>
Tensor<T> maxpool_forward(const Tensor<T>& input, std::size_t window, std::size_t stride);
/// Routes each upstream value to the first maximal element of its window (scan order).
template <class T>
Tensor<T> maxpool_backward(const Tensor<T>& input, const Tensor<T>& upstream, std::size_t window,
                           std::size_t stride);
template <class T>
Tensor<T> avgpool_forward(const Tensor<T>& input, std::size_t window, std::size_t stride);
template <class T>
Tensor<T> avgpool_backward(const Tensor<T>& input, const Tensor<T>& upstream, std::size_t window,
                           std::size_t stride);

// y = W x + b per sample. input (N, ...) is read as (N, F); weights (OUT, F); bias (OUT).
template <class T>
Tensor<T> linear_forward(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& bias);
template <class T>
LayerGrad<T> linear_backward(const Tensor<T>& input, const Tensor<T>& weights,
                             const Tensor<T>& upstream, GradRequest request = {});

struct BatchNormConfig {
  double eps = 1e-5;
  double momentum = 0.9;  // running = momentum * running + (1 - momentum) * batch
};

template <class T>
struct BatchNormStats {
  Tensor<T> running_mean;
  Tensor<T> running_var;
};

template <class T>
BatchNormStats<T> batchnorm_init_stats(std::size_t channels);

/// Normalizes over every axis except axis 1. In Train mode the batch statistics
/// are used and, when `update` is non-null, folded into the running statistics.
template <class T>
Tensor<T> batchnorm_forward(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                            const BatchNormStats<T>& stats, Mode mode, const BatchNormConfig& config,
                            BatchNormStats<T>* update = nullptr);

/// param_grads = {d gamma, d beta}.
template <class T>
LayerGrad<T> batchnorm_backward(const Tensor<T>& input, const Tensor<T>& gamma,
                                const Tensor<T>& upstream, const BatchNormStats<T>& stats, Mode mode,
                                const BatchNormConfig& config, GradRequest request = {});

}  // namespace saf
