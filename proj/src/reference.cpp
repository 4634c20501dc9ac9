#include "saf/reference.hpp"

#include <algorithm>

namespace saf::reference {

template <class T>
void gemm(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      T sum{0};
      for (std::size_t p = 0; p < k; ++p) sum += a[i * k + p] * b[p * n + j];
      c[i * n + j] = sum;
    }
}

template <class T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& bias,
                         std::size_t stride, std::size_t pad) {
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t oc = weights.dim(0), kh = weights.dim(2), kw = weights.dim(3);
  if (weights.dim(1) != c) throw DimensionError("reference conv2d: channel mismatch on axis 1");
  const std::size_t oh = conv_output_extent(h, kh, stride, pad);
  const std::size_t ow = conv_output_extent(w, kw, stride, pad);
  Tensor<T> out({n, oc, oh, ow});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t o = 0; o < oc; ++o)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t x = 0; x < ow; ++x) {
          T sum = bias[o];
          for (std::size_t ci = 0; ci < c; ++ci)
            for (std::size_t ky = 0; ky < kh; ++ky)
              for (std::size_t kx = 0; kx < kw; ++kx) {
                const auto iy = static_cast<std::ptrdiff_t>(y * stride + ky) - static_cast<std::ptrdiff_t>(pad);
                const auto ix = static_cast<std::ptrdiff_t>(x * stride + kx) - static_cast<std::ptrdiff_t>(pad);
                if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(h) ||
                    ix >= static_cast<std::ptrdiff_t>(w))
                  continue;
                sum += input.at(b, ci, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix)) *
                       weights.at(o, ci, ky, kx);
              }
          out.at(b, o, y, x) = sum;
        }
  return out;
}

template <class T>
LayerGrad<T> conv2d_backward(const Tensor<T>& input, const Tensor<T>& weights,
                             const Tensor<T>& upstream, std::size_t stride, std::size_t pad) {
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t oc = weights.dim(0), kh = weights.dim(2), kw = weights.dim(3);
  const std::size_t oh = upstream.dim(2), ow = upstream.dim(3);
  Tensor<T> dx(input.shape()), dw(weights.shape()), db({oc});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t o = 0; o < oc; ++o)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t x = 0; x < ow; ++x) {
          const T g = upstream.at(b, o, y, x);
          db[o] += g;
          for (std::size_t ci = 0; ci < c; ++ci)
            for (std::size_t ky = 0; ky < kh; ++ky)
              for (std::size_t kx = 0; kx < kw; ++kx) {
                const auto iy = static_cast<std::ptrdiff_t>(y * stride + ky) - static_cast<std::ptrdiff_t>(pad);
                const auto ix = static_cast<std::ptrdiff_t>(x * stride + kx) - static_cast<std::ptrdiff_t>(pad);
                if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(h) ||
                    ix >= static_cast<std::ptrdiff_t>(w))
                  continue;
                const auto uy = static_cast<std::size_t>(iy), ux = static_cast<std::size_t>(ix);
                dw.at(o, ci, ky, kx) += g * input.at(b, ci, uy, ux);
                dx.at(b, ci, uy, ux) += g * weights.at(o, ci, ky, kx);
              }
        }
  LayerGrad<T> result;
  result.input_grad = std::move(dx);
  result.param_grads.push_back(std::move(dw));
  result.param_grads.push_back(std::move(db));
  return result;
}

template <class T>
Tensor<T> maxpool_forward(const Tensor<T>& input, std::size_t window, std::size_t stride) {
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t oh = (h - window) / stride + 1, ow = (w - window) / stride + 1;
  Tensor<T> out({n, c, oh, ow});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ci = 0; ci < c; ++ci)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t x = 0; x < ow; ++x) {
          T best = input.at(b, ci, y * stride, x * stride);
          for (std::size_t ky = 0; ky < window; ++ky)
            for (std::size_t kx = 0; kx < window; ++kx)
              best = std::max(best, input.at(b, ci, y * stride + ky, x * stride + kx));
          out.at(b, ci, y, x) = best;
        }
  return out;
}

template <class T>
Tensor<T> avgpool_forward(const Tensor<T>& input, std::size_t window, std::size_t stride) {
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t oh = (h - window) / stride + 1, ow = (w - window) / stride + 1;
  Tensor<T> out({n, c, oh, ow});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ci = 0; ci < c; ++ci)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t x = 0; x < ow; ++x) {
          T sum{0};
          for (std::size_t ky = 0; ky < window; ++ky)
            for (std::size_t kx = 0; kx < window; ++kx)
              sum += input.at(b, ci, y * stride + ky, x * stride + kx);
          out.at(b, ci, y, x) = sum / static_cast<T>(window * window);
        }
  return out;
}

template <class T>
Tensor<T> linear_forward(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& bias) {
  const std::size_t n = input.dim(0), out_dim = weights.dim(0), f = weights.dim(1);
  Tensor<T> out({n, out_dim});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t o = 0; o < out_dim; ++o) {
      T sum = bias[o];
      for (std::size_t i = 0; i < f; ++i) sum += weights[o * f + i] * input[b * f + i];
      out[b * out_dim + o] = sum;
    }
  return out;
}

#define SAF_INSTANTIATE_REFERENCE(T)                                                              \
  template void gemm(std::size_t, std::size_t, std::size_t, const T*, const T*, T*);              \
  template Tensor<T> conv2d_forward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,         \
                                    std::size_t, std::size_t);                                    \
  template LayerGrad<T> conv2d_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,     \
                                        std::size_t, std::size_t);                                \
  template Tensor<T> maxpool_forward(const Tensor<T>&, std::size_t, std::size_t);                 \
  template Tensor<T> avgpool_forward(const Tensor<T>&, std::size_t, std::size_t);                 \
  template Tensor<T> linear_forward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);

SAF_INSTANTIATE_REFERENCE(float)
SAF_INSTANTIATE_REFERENCE(double)

#undef SAF_INSTANTIATE_REFERENCE

}  // namespace saf::reference
