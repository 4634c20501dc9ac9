#include "saf/kernels.hpp"

#include <cmath>
#include <string>

#include "saf/gemm.hpp"

namespace saf {
namespace {

struct ConvGeometry {
  std::size_t n, c, h, w;
  std::size_t oc, kh, kw;
  std::size_t oh, ow;
  std::size_t stride, pad;

  std::size_t patch() const { return c * kh * kw; }
  std::size_t positions() const { return oh * ow; }
};

template <class T>
ConvGeometry conv_geometry(const Tensor<T>& input, const Tensor<T>& weights, std::size_t stride,
                           std::size_t pad, const char* op) {
  if (input.rank() != 4)
    throw DimensionError(std::string(op) + ": input must be rank 4 (N, C, H, W), got " +
                         shape_string(input.shape()));
  if (weights.rank() != 4)
    throw DimensionError(std::string(op) + ": weights must be rank 4 (OC, C, KH, KW), got " +
                         shape_string(weights.shape()));
  if (stride == 0) throw DimensionError(std::string(op) + ": stride must be positive");
  ConvGeometry g{};
  g.n = input.dim(0);
  g.c = input.dim(1);
  g.h = input.dim(2);
  g.w = input.dim(3);
  g.oc = weights.dim(0);
  g.kh = weights.dim(2);
  g.kw = weights.dim(3);
  g.stride = stride;
  g.pad = pad;
  if (weights.dim(1) != g.c)
    throw DimensionError(std::string(op) + ": input channel axis 1 has " + std::to_string(g.c) +
                         " channels but weights axis 1 expects " + std::to_string(weights.dim(1)));
  if (g.kh > g.h + 2 * pad || g.kw > g.w + 2 * pad)
    throw DimensionError(std::string(op) + ": kernel " + std::to_string(g.kh) + "x" +
                         std::to_string(g.kw) + " exceeds padded input " +
                         std::to_string(g.h + 2 * pad) + "x" + std::to_string(g.w + 2 * pad) +
                         " on axes 2/3");
  g.oh = conv_output_extent(g.h, g.kh, stride, pad);
  g.ow = conv_output_extent(g.w, g.kw, stride, pad);
  return g;
}

// col is (C*KH*KW) x (N*OH*OW).
template <class T>
void im2col(const Tensor<T>& input, const ConvGeometry& g, std::vector<T>& col) {
  const std::size_t cols = g.n * g.positions();
  col.assign(g.patch() * cols, T{0});
  const T* x = input.raw();
  const std::ptrdiff_t rows = static_cast<std::ptrdiff_t>(g.patch());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t row = 0; row < rows; ++row) {
    const std::size_t kw_i = static_cast<std::size_t>(row) % g.kw;
    const std::size_t kh_i = (static_cast<std::size_t>(row) / g.kw) % g.kh;
    const std::size_t c_i = static_cast<std::size_t>(row) / (g.kw * g.kh);
    T* dst = col.data() + static_cast<std::size_t>(row) * cols;
    for (std::size_t n = 0; n < g.n; ++n) {
      const T* plane = x + (n * g.c + c_i) * g.h * g.w;
      for (std::size_t oy = 0; oy < g.oh; ++oy) {
        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + kh_i) -
                                  static_cast<std::ptrdiff_t>(g.pad);
        T* out = dst + n * g.positions() + oy * g.ow;
        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
        for (std::size_t ox = 0; ox < g.ow; ++ox) {
          const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kw_i) -
                                    static_cast<std::ptrdiff_t>(g.pad);
          if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.w))
            out[ox] = plane[static_cast<std::size_t>(iy) * g.w + static_cast<std::size_t>(ix)];
        }
      }
    }
  }
}

template <class T>
Tensor<T> col2im(const std::vector<T>& col, const ConvGeometry& g) {
  Tensor<T> grad({g.n, g.c, g.h, g.w});
  const std::size_t cols = g.n * g.positions();
  const std::ptrdiff_t planes = static_cast<std::ptrdiff_t>(g.n * g.c);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t pl = 0; pl < planes; ++pl) {
    const std::size_t n = static_cast<std::size_t>(pl) / g.c;
    const std::size_t c_i = static_cast<std::size_t>(pl) % g.c;
    T* plane = grad.raw() + static_cast<std::size_t>(pl) * g.h * g.w;
    for (std::size_t kh_i = 0; kh_i < g.kh; ++kh_i) {
      for (std::size_t kw_i = 0; kw_i < g.kw; ++kw_i) {
        const std::size_t row = (c_i * g.kh + kh_i) * g.kw + kw_i;
        const T* src = col.data() + row * cols + n * g.positions();
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + kh_i) -
                                    static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kw_i) -
                                      static_cast<std::ptrdiff_t>(g.pad);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.w))
              plane[static_cast<std::size_t>(iy) * g.w + static_cast<std::size_t>(ix)] +=
                  src[oy * g.ow + ox];
          }
        }
      }
    }
  }
  return grad;
}

struct PoolGeometry {
  std::size_t n, c, h, w, oh, ow, window, stride;
};

template <class T>
PoolGeometry pool_geometry(const Tensor<T>& input, std::size_t window, std::size_t stride,
                           const char* op) {
  if (input.rank() != 4)
    throw DimensionError(std::string(op) + ": input must be rank 4 (N, C, H, W), got " +
                         shape_string(input.shape()));
  if (window == 0 || stride == 0)
    throw DimensionError(std::string(op) + ": window and stride must be positive");
  PoolGeometry g{input.dim(0), input.dim(1), input.dim(2), input.dim(3), 0, 0, window, stride};
  if (window > g.h || window > g.w)
    throw DimensionError(std::string(op) + ": window " + std::to_string(window) +
                         " larger than spatial extent " + std::to_string(g.h) + "x" +
                         std::to_string(g.w) + " on axes 2/3");
  g.oh = (g.h - window) / stride + 1;
  g.ow = (g.w - window) / stride + 1;
  return g;
}

template <class T>
std::size_t feature_count(const Tensor<T>& input, const char* op) {
  if (input.rank() < 2 || input.dim(0) == 0)
    throw DimensionError(std::string(op) + ": input must have a batch axis and features, got " +
                         shape_string(input.shape()));
  return input.size() / input.dim(0);
}

template <class T>
void check_linear(const Tensor<T>& input, const Tensor<T>& weights, const char* op) {
  if (weights.rank() != 2)
    throw DimensionError(std::string(op) + ": weights must be rank 2 (OUT, F), got " +
                         shape_string(weights.shape()));
  const std::size_t f = feature_count(input, op);
  if (weights.dim(1) != f)
    throw DimensionError(std::string(op) + ": input has " + std::to_string(f) +
                         " features per sample but weights axis 1 expects " +
                         std::to_string(weights.dim(1)));
}

struct ChannelLayout {
  std::size_t n, c, spatial;
  std::size_t count() const { return n * spatial; }
};

template <class T>
ChannelLayout channel_layout(const Tensor<T>& input, const char* op) {
  if (input.rank() < 2)
    throw DimensionError(std::string(op) + ": input must have batch and channel axes, got " +
                         shape_string(input.shape()));
  ChannelLayout l{input.dim(0), input.dim(1), 1};
  for (std::size_t a = 2; a < input.rank(); ++a) l.spatial *= input.dim(a);
  return l;
}

// Per-channel batch mean and biased variance, accumulated in double.
template <class T>
void channel_moments(const Tensor<T>& input, const ChannelLayout& l, std::vector<double>& mean,
                     std::vector<double>& var) {
  mean.assign(l.c, 0.0);
  var.assign(l.c, 0.0);
  const std::ptrdiff_t channels = static_cast<std::ptrdiff_t>(l.c);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t ci = 0; ci < channels; ++ci) {
    const std::size_t c = static_cast<std::size_t>(ci);
    double sum = 0.0;
    for (std::size_t n = 0; n < l.n; ++n) {
      const T* p = input.raw() + (n * l.c + c) * l.spatial;
      for (std::size_t s = 0; s < l.spatial; ++s) sum += p[s];
    }
    const double mu = sum / static_cast<double>(l.count());
    double sq = 0.0;
    for (std::size_t n = 0; n < l.n; ++n) {
      const T* p = input.raw() + (n * l.c + c) * l.spatial;
      for (std::size_t s = 0; s < l.spatial; ++s) {
        const double d = p[s] - mu;
        sq += d * d;
      }
    }
    mean[c] = mu;
    var[c] = sq / static_cast<double>(l.count());
  }
}

}  // namespace

std::size_t conv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad) {
  return (in + 2 * pad - kernel) / stride + 1;
}

template <class T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& bias,
                         std::size_t stride, std::size_t pad) {
  const ConvGeometry g = conv_geometry(input, weights, stride, pad, "conv2d_forward");
  require_shape(bias.shape(), {g.oc}, "conv2d_forward bias");
  std::vector<T> col;
  im2col(input, g, col);
  const std::size_t cols = g.n * g.positions();
  std::vector<T> product(g.oc * cols);
  gemm(Transpose::No, Transpose::No, g.oc, cols, g.patch(), weights.raw(), col.data(),
       product.data());

  Tensor<T> out({g.n, g.oc, g.oh, g.ow});
  const std::ptrdiff_t planes = static_cast<std::ptrdiff_t>(g.n * g.oc);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t pl = 0; pl < planes; ++pl) {
    const std::size_t n = static_cast<std::size_t>(pl) / g.oc;
    const std::size_t o = static_cast<std::size_t>(pl) % g.oc;
    const T* src = product.data() + o * cols + n * g.positions();
    T* dst = out.raw() + static_cast<std::size_t>(pl) * g.positions();
    const T b = bias[o];
    for (std::size_t p = 0; p < g.positions(); ++p) dst[p] = src[p] + b;
  }
  return out;
}

template <class T>
LayerGrad<T> conv2d_backward(const Tensor<T>& input, const Tensor<T>& weights,
                             const Tensor<T>& upstream, std::size_t stride, std::size_t pad,
                             GradRequest request) {
  const ConvGeometry g = conv_geometry(input, weights, stride, pad, "conv2d_backward");
  require_shape(upstream.shape(), {g.n, g.oc, g.oh, g.ow}, "conv2d_backward upstream");
  const std::size_t cols = g.n * g.positions();

  // Upstream as (OC, N*P).
  std::vector<T> dy(g.oc * cols);
  const std::ptrdiff_t planes = static_cast<std::ptrdiff_t>(g.n * g.oc);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t pl = 0; pl < planes; ++pl) {
    const std::size_t n = static_cast<std::size_t>(pl) / g.oc;
    const std::size_t o = static_cast<std::size_t>(pl) % g.oc;
    const T* src = upstream.raw() + static_cast<std::size_t>(pl) * g.positions();
    T* dst = dy.data() + o * cols + n * g.positions();
    for (std::size_t p = 0; p < g.positions(); ++p) dst[p] = src[p];
  }

  LayerGrad<T> result;
  if (request.params) {
    std::vector<T> col;
    im2col(input, g, col);
    Tensor<T> dw(weights.shape());
    gemm(Transpose::No, Transpose::Yes, g.oc, g.patch(), cols, dy.data(), col.data(), dw.raw());
    Tensor<T> db({g.oc});
    const std::ptrdiff_t oc = static_cast<std::ptrdiff_t>(g.oc);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t o = 0; o < oc; ++o) {
      T sum{0};
      const T* row = dy.data() + static_cast<std::size_t>(o) * cols;
      for (std::size_t j = 0; j < cols; ++j) sum += row[j];
      db[static_cast<std::size_t>(o)] = sum;
    }
    result.param_grads.push_back(std::move(dw));
    result.param_grads.push_back(std::move(db));
  }
  if (request.input) {
    std::vector<T> dcol(g.patch() * cols);
    gemm(Transpose::Yes, Transpose::No, g.patch(), cols, g.oc, weights.raw(), dy.data(), dcol.data());
    result.input_grad = col2im(dcol, g);
  }
  return result;
}

template <class T>
Tensor<T> maxpool_forward(const Tensor<T>& input, std::size_t window, std::size_t stride) {
  const PoolGeometry g = pool_geometry(input, window, stride, "maxpool_forward");
  Tensor<T> out({g.n, g.c, g.oh, g.ow});
  const std::ptrdiff_t planes = static_cast<std::ptrdiff_t>(g.n * g.c);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t pl = 0; pl < planes; ++pl) {
    const T* src = input.raw() + static_cast<std::size_t>(pl) * g.h * g.w;
    T* dst = out.raw() + static_cast<std::size_t>(pl) * g.oh * g.ow;
    for (std::size_t oy = 0; oy < g.oh; ++oy)
      for (std::size_t ox = 0; ox < g.ow; ++ox) {
        T best = src[oy * stride * g.w + ox * stride];
        for (std::size_t ky = 0; ky < window; ++ky)
          for (std::size_t kx = 0; kx < window; ++kx) {
            const T v = src[(oy * stride + ky) * g.w + ox * stride + kx];
            if (v > best) best = v;
          }
        dst[oy * g.ow + ox] = best;
      }
  }
  return out;
}

template <class T>
Tensor<T> maxpool_backward(const Tensor<T>& input, const Tensor<T>& upstream, std::size_t window,
                           std::size_t stride) {
  const PoolGeometry g = pool_geometry(input, window, stride, "maxpool_backward");
  require_shape(upstream.shape(), {g.n, g.c, g.oh, g.ow}, "maxpool_backward upstream");
  Tensor<T> grad(input.shape());
  const std::ptrdiff_t planes = static_cast<std::ptrdiff_t>(g.n * g.c);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t pl = 0; pl < planes; ++pl) {
    const T* src = input.raw() + static_cast<std::size_t>(pl) * g.h * g.w;
    const T* up = upstream.raw() + static_cast<std::size_t>(pl) * g.oh * g.ow;
    T* dst = grad.raw() + static_cast<std::size_t>(pl) * g.h * g.w;
    for (std::size_t oy = 0; oy < g.oh; ++oy)
      for (std::size_t ox = 0; ox < g.ow; ++ox) {
        std::size_t arg = oy * stride * g.w + ox * stride;
        for (std::size_t ky = 0; ky < window; ++ky)
          for (std::size_t kx = 0; kx < window; ++kx) {
            const std::size_t idx = (oy * stride + ky) * g.w + ox * stride + kx;
            if (src[idx] > src[arg]) arg = idx;
          }
        dst[arg] += up[oy * g.ow + ox];
      }
  }
  return grad;
}

template <class T>
Tensor<T> avgpool_forward(const Tensor<T>& input, std::size_t window, std::size_t stride) {
  const PoolGeometry g = pool_geometry(input, window, stride, "avgpool_forward");
  Tensor<T> out({g.n, g.c, g.oh, g.ow});
  const T scale = T{1} / static_cast<T>(window * window);
  const std::ptrdiff_t planes = static_cast<std::ptrdiff_t>(g.n * g.c);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t pl = 0; pl < planes; ++pl) {
    const T* src = input.raw() + static_cast<std::size_t>(pl) * g.h * g.w;
    T* dst = out.raw() + static_cast<std::size_t>(pl) * g.oh * g.ow;
    for (std::size_t oy = 0; oy < g.oh; ++oy)
      for (std::size_t ox = 0; ox < g.ow; ++ox) {
        T sum{0};
        for (std::size_t ky = 0; ky < window; ++ky)
          for (std::size_t kx = 0; kx < window; ++kx)
            sum += src[(oy * stride + ky) * g.w + ox * stride + kx];
        dst[oy * g.ow + ox] = sum * scale;
      }
  }
  return out;
}

template <class T>
Tensor<T> avgpool_backward(const Tensor<T>& input, const Tensor<T>& upstream, std::size_t window,
                           std::size_t stride) {
  const PoolGeometry g = pool_geometry(input, window, stride, "avgpool_backward");
  require_shape(upstream.shape(), {g.n, g.c, g.oh, g.ow}, "avgpool_backward upstream");
  Tensor<T> grad(input.shape());
  const T scale = T{1} / static_cast<T>(window * window);
  const std::ptrdiff_t planes = static_cast<std::ptrdiff_t>(g.n * g.c);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t pl = 0; pl < planes; ++pl) {
    const T* up = upstream.raw() + static_cast<std::size_t>(pl) * g.oh * g.ow;
    T* dst = grad.raw() + static_cast<std::size_t>(pl) * g.h * g.w;
    for (std::size_t oy = 0; oy < g.oh; ++oy)
      for (std::size_t ox = 0; ox < g.ow; ++ox) {
        const T v = up[oy * g.ow + ox] * scale;
        for (std::size_t ky = 0; ky < window; ++ky)
          for (std::size_t kx = 0; kx < window; ++kx)
            dst[(oy * stride + ky) * g.w + ox * stride + kx] += v;
      }
  }
  return grad;
}

template <class T>
Tensor<T> linear_forward(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& bias) {
  check_linear(input, weights, "linear_forward");
  const std::size_t n = input.dim(0);
  const std::size_t out_dim = weights.dim(0);
  const std::size_t f = weights.dim(1);
  require_shape(bias.shape(), {out_dim}, "linear_forward bias");
  Tensor<T> out({n, out_dim});
  gemm(Transpose::No, Transpose::Yes, n, out_dim, f, input.raw(), weights.raw(), out.raw());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t o = 0; o < out_dim; ++o) out[i * out_dim + o] += bias[o];
  return out;
}

template <class T>
LayerGrad<T> linear_backward(const Tensor<T>& input, const Tensor<T>& weights,
                             const Tensor<T>& upstream, GradRequest request) {
  check_linear(input, weights, "linear_backward");
  const std::size_t n = input.dim(0);
  const std::size_t out_dim = weights.dim(0);
  const std::size_t f = weights.dim(1);
  require_shape(upstream.shape(), {n, out_dim}, "linear_backward upstream");
  LayerGrad<T> result;
  if (request.params) {
    Tensor<T> dw(weights.shape());
    gemm(Transpose::Yes, Transpose::No, out_dim, f, n, upstream.raw(), input.raw(), dw.raw());
    Tensor<T> db({out_dim});
    for (std::size_t o = 0; o < out_dim; ++o) {
      T sum{0};
      for (std::size_t i = 0; i < n; ++i) sum += upstream[i * out_dim + o];
      db[o] = sum;
    }
    result.param_grads.push_back(std::move(dw));
    result.param_grads.push_back(std::move(db));
  }
  if (request.input) {
    Tensor<T> dx(input.shape());
    gemm(Transpose::No, Transpose::No, n, f, out_dim, upstream.raw(), weights.raw(), dx.raw());
    result.input_grad = std::move(dx);
  }
  return result;
}

template <class T>
BatchNormStats<T> batchnorm_init_stats(std::size_t channels) {
  return {Tensor<T>({channels}, T{0}), Tensor<T>({channels}, T{1})};
}

template <class T>
Tensor<T> batchnorm_forward(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                            const BatchNormStats<T>& stats, Mode mode, const BatchNormConfig& config,
                            BatchNormStats<T>* update) {
  const ChannelLayout l = channel_layout(input, "batchnorm_forward");
  require_shape(gamma.shape(), {l.c}, "batchnorm_forward gamma");
  require_shape(beta.shape(), {l.c}, "batchnorm_forward beta");
  std::vector<double> mean(l.c), var(l.c);
  if (mode == Mode::Train) {
    if (l.n < 2)
      throw DimensionError("batchnorm_forward: training mode needs a batch of at least 2 on axis 0, got " +
                           std::to_string(l.n));
    channel_moments(input, l, mean, var);
    if (update) {
      const double m = static_cast<double>(l.count());
      const double unbias = m > 1 ? m / (m - 1) : 1.0;
      for (std::size_t c = 0; c < l.c; ++c) {
        update->running_mean[c] = static_cast<T>(config.momentum * update->running_mean[c] +
                                                 (1 - config.momentum) * mean[c]);
        update->running_var[c] = static_cast<T>(config.momentum * update->running_var[c] +
                                                (1 - config.momentum) * var[c] * unbias);
      }
    }
  } else {
    require_shape(stats.running_mean.shape(), {l.c}, "batchnorm_forward running_mean");
    for (std::size_t c = 0; c < l.c; ++c) {
      mean[c] = stats.running_mean[c];
      var[c] = stats.running_var[c];
    }
  }
  Tensor<T> out(input.shape());
  const std::ptrdiff_t planes = static_cast<std::ptrdiff_t>(l.n * l.c);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t pl = 0; pl < planes; ++pl) {
    const std::size_t c = static_cast<std::size_t>(pl) % l.c;
    const double inv_std = 1.0 / std::sqrt(var[c] + config.eps);
    const T scale = static_cast<T>(gamma[c] * inv_std);
    const T shift = static_cast<T>(beta[c] - gamma[c] * mean[c] * inv_std);
    const T* src = input.raw() + static_cast<std::size_t>(pl) * l.spatial;
    T* dst = out.raw() + static_cast<std::size_t>(pl) * l.spatial;
    for (std::size_t s = 0; s < l.spatial; ++s) dst[s] = src[s] * scale + shift;
  }
  return out;
}

template <class T>
LayerGrad<T> batchnorm_backward(const Tensor<T>& input, const Tensor<T>& gamma,
                                const Tensor<T>& upstream, const BatchNormStats<T>& stats, Mode mode,
                                const BatchNormConfig& config, GradRequest request) {
  const ChannelLayout l = channel_layout(input, "batchnorm_backward");
  require_shape(upstream.shape(), input.shape(), "batchnorm_backward upstream");
  require_shape(gamma.shape(), {l.c}, "batchnorm_backward gamma");
  std::vector<double> mean(l.c), var(l.c);
  if (mode == Mode::Train) {
    if (l.n < 2)
      throw DimensionError("batchnorm_backward: training mode needs a batch of at least 2 on axis 0");
    channel_moments(input, l, mean, var);
  } else {
    for (std::size_t c = 0; c < l.c; ++c) {
      mean[c] = stats.running_mean[c];
      var[c] = stats.running_var[c];
    }
  }

  // Per-channel sums of dy and dy * xhat.
  std::vector<double> sum_dy(l.c, 0.0), sum_dy_xhat(l.c, 0.0);
  const std::ptrdiff_t channels = static_cast<std::ptrdiff_t>(l.c);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t ci = 0; ci < channels; ++ci) {
    const std::size_t c = static_cast<std::size_t>(ci);
    const double inv_std = 1.0 / std::sqrt(var[c] + config.eps);
    double a = 0.0, b = 0.0;
    for (std::size_t n = 0; n < l.n; ++n) {
      const T* x = input.raw() + (n * l.c + c) * l.spatial;
      const T* dy = upstream.raw() + (n * l.c + c) * l.spatial;
      for (std::size_t s = 0; s < l.spatial; ++s) {
        a += dy[s];
        b += dy[s] * (x[s] - mean[c]) * inv_std;
      }
    }
    sum_dy[c] = a;
    sum_dy_xhat[c] = b;
  }

  LayerGrad<T> result;
  if (request.params) {
    Tensor<T> dgamma({l.c}), dbeta({l.c});
    for (std::size_t c = 0; c < l.c; ++c) {
      dgamma[c] = static_cast<T>(sum_dy_xhat[c]);
      dbeta[c] = static_cast<T>(sum_dy[c]);
    }
    result.param_grads.push_back(std::move(dgamma));
    result.param_grads.push_back(std::move(dbeta));
  }
  if (request.input) {
    Tensor<T> dx(input.shape());
    const double m = static_cast<double>(l.count());
    const std::ptrdiff_t planes = static_cast<std::ptrdiff_t>(l.n * l.c);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t pl = 0; pl < planes; ++pl) {
      const std::size_t c = static_cast<std::size_t>(pl) % l.c;
      const double inv_std = 1.0 / std::sqrt(var[c] + config.eps);
      const T* x = input.raw() + static_cast<std::size_t>(pl) * l.spatial;
      const T* dy = upstream.raw() + static_cast<std::size_t>(pl) * l.spatial;
      T* out = dx.raw() + static_cast<std::size_t>(pl) * l.spatial;
      if (mode == Mode::Train) {
        const double k = gamma[c] * inv_std / m;
        for (std::size_t s = 0; s < l.spatial; ++s) {
          const double xhat = (x[s] - mean[c]) * inv_std;
          out[s] = static_cast<T>(k * (m * dy[s] - sum_dy[c] - xhat * sum_dy_xhat[c]));
        }
      } else {
        const double k = gamma[c] * inv_std;
        for (std::size_t s = 0; s < l.spatial; ++s) out[s] = static_cast<T>(k * dy[s]);
      }
    }
    result.input_grad = std::move(dx);
  }
  return result;
}

#define SAF_INSTANTIATE_KERNELS(T)                                                                 \
  template Tensor<T> conv2d_forward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,          \
                                    std::size_t, std::size_t);                                     \
  template LayerGrad<T> conv2d_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,      \
                                        std::size_t, std::size_t, GradRequest);                    \
  template Tensor<T> maxpool_forward(const Tensor<T>&, std::size_t, std::size_t);                  \
  template Tensor<T> maxpool_backward(const Tensor<T>&, const Tensor<T>&, std::size_t,             \
                                      std::size_t);                                                \
  template Tensor<T> avgpool_forward(const Tensor<T>&, std::size_t, std::size_t);                  \
  template Tensor<T> avgpool_backward(const Tensor<T>&, const Tensor<T>&, std::size_t,             \
                                      std::size_t);                                                \
  template Tensor<T> linear_forward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);         \
  template LayerGrad<T> linear_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,      \
                                        GradRequest);                                              \
  template BatchNormStats<T> batchnorm_init_stats<T>(std::size_t);                                 \
  template Tensor<T> batchnorm_forward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,       \
                                       const BatchNormStats<T>&, Mode, const BatchNormConfig&,     \
                                       BatchNormStats<T>*);                                        \
  template LayerGrad<T> batchnorm_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,   \
                                           const BatchNormStats<T>&, Mode,                         \
                                           const BatchNormConfig&, GradRequest);

SAF_INSTANTIATE_KERNELS(float)
SAF_INSTANTIATE_KERNELS(double)

#undef SAF_INSTANTIATE_KERNELS

}  // namespace saf
