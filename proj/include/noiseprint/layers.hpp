#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "noiseprint/common.hpp"
#include "noiseprint/tensor.hpp"

namespace noiseprint {

template <class T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <class T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

/// Channel/batch/spatial extents of an activation tensor. Rank-3 tensors are [C, H, W] with N = 1.
struct ActivationDims {
  std::size_t channels = 0, batch = 0, height = 0, width = 0;
  std::size_t plane() const { return height * width; }
  std::size_t per_channel() const { return batch * height * width; }
};

template <class T>
ActivationDims activation_dims(const Tensor<T>& t) {
  if (t.rank() == 4) return {t.dim(0), t.dim(1), t.dim(2), t.dim(3)};
  if (t.rank() == 3) return {t.dim(0), 1, t.dim(1), t.dim(2)};
  throw invalid_input("activation tensor must be [C,H,W] or [C,N,H,W], got " + shape_str(t.shape()));
}

template <class T>
struct ConvLayer {
  int in_ch = 1;
  int out_ch = 1;
  int k = 3;
  Tensor<T> weight;  // [out_ch, in_ch, k, k]
  Tensor<T> bias;    // [out_ch]

  ConvLayer() = default;
  ConvLayer(int in, int out, int kernel)
      : in_ch(in),
        out_ch(out),
        k(kernel),
        weight({static_cast<std::size_t>(out), static_cast<std::size_t>(in), static_cast<std::size_t>(kernel),
                static_cast<std::size_t>(kernel)}),
        bias({static_cast<std::size_t>(out)}) {
    require(in > 0 && out > 0, "conv channel counts must be positive");
    require(kernel > 0 && kernel % 2 == 1, "conv kernel size must be odd, got " + std::to_string(kernel));
  }

  int pad() const { return (k - 1) / 2; }
  std::size_t fan_in() const { return static_cast<std::size_t>(in_ch) * k * k; }
};

template <class T>
struct ConvGrads {
  Tensor<T> input;
  Tensor<T> weight;
  Tensor<T> bias;
};

namespace detail {

// Unrolls k x k zero-padded neighbourhoods of samples [n0, n1):
// row (c*k + ky)*k + kx, column (n - n0)*H*W + y*W + x.
template <class T>
void im2col(const T* in, const ActivationDims& d, int k, T* col, std::size_t n0, std::size_t n1) {
  const int pad = (k - 1) / 2;
  const auto H = static_cast<int>(d.height), W = static_cast<int>(d.width);
  const std::size_t cols = (n1 - n0) * d.plane();
  for (std::size_t c = 0; c < d.channels; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* row = col + ((c * k + ky) * k + kx) * cols;
        const int dy = ky - pad, dx = kx - pad;
        const int x_lo = std::max(0, -dx), x_hi = std::min(W, W - dx);
        for (std::size_t n = n0; n < n1; ++n) {
          const T* src = in + (c * d.batch + n) * d.plane();
          T* dst = row + (n - n0) * d.plane();
          for (int y = 0; y < H; ++y) {
            T* out = dst + static_cast<std::size_t>(y) * W;
            const int sy = y + dy;
            if (sy < 0 || sy >= H || x_lo >= x_hi) {
              std::fill(out, out + W, T(0));
              continue;
            }
            std::fill(out, out + x_lo, T(0));
            const T* s = src + static_cast<std::size_t>(sy) * W + dx;
            std::copy(s + x_lo, s + x_hi, out + x_lo);
            std::fill(out + x_hi, out + W, T(0));
          }
        }
      }
    }
  }
}

template <class T>
void im2col(const T* in, const ActivationDims& d, int k, T* col) {
  im2col(in, d, k, col, 0, d.batch);
}

// Adjoint of im2col: scatters column gradients back onto the (zero-initialised) input gradient.
template <class T>
void col2im(const T* col, const ActivationDims& d, int k, T* grad_in, std::size_t n0, std::size_t n1) {
  const int pad = (k - 1) / 2;
  const auto H = static_cast<int>(d.height), W = static_cast<int>(d.width);
  const std::size_t cols = (n1 - n0) * d.plane();
  for (std::size_t c = 0; c < d.channels; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* row = col + ((c * k + ky) * k + kx) * cols;
        const int dy = ky - pad, dx = kx - pad;
        const int x_lo = std::max(0, -dx), x_hi = std::min(W, W - dx);
        for (std::size_t n = n0; n < n1; ++n) {
          T* dst = grad_in + (c * d.batch + n) * d.plane();
          const T* src = row + (n - n0) * d.plane();
          for (int y = 0; y < H; ++y) {
            const int sy = y + dy;
            if (sy < 0 || sy >= H) continue;
            const T* g = src + static_cast<std::size_t>(y) * W;
            T* o = dst + static_cast<std::size_t>(sy) * W + dx;
            for (int x = x_lo; x < x_hi; ++x) o[x] += g[x];
          }
        }
      }
    }
  }
}

template <class T>
void col2im(const T* col, const ActivationDims& d, int k, T* grad_in) {
  col2im(col, d, k, grad_in, 0, d.batch);
}

// Samples per im2col block, sized so one block of columns stays cache resident.
inline std::size_t conv_chunk(const ActivationDims& d) {
  constexpr std::size_t target_columns = 4096;
  return std::max<std::size_t>(1, target_columns / std::max<std::size_t>(1, d.plane()));
}

template <class T>
using StridedMap = Eigen::Map<RowMatrix<T>, 0, Eigen::OuterStride<>>;
template <class T>
using ConstStridedMap = Eigen::Map<const RowMatrix<T>, 0, Eigen::OuterStride<>>;

template <class T>
Tensor<T> like(const Tensor<T>& ref, std::size_t channels) {
  auto shape = ref.shape();
  shape[0] = channels;
  return Tensor<T>(std::move(shape));
}

}  // namespace detail

/// Same-padded 2-D convolution (cross-correlation) plus bias.
template <class T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const ConvLayer<T>& layer) {
  const auto d = activation_dims(input);
  require(d.channels == static_cast<std::size_t>(layer.in_ch),
          "conv2d: input has " + std::to_string(d.channels) + " channels, layer expects " +
              std::to_string(layer.in_ch));
  require(layer.weight.size() == layer.fan_in() * layer.out_ch && layer.bias.size() == static_cast<std::size_t>(layer.out_ch),
          "conv2d: layer parameters do not match declared shape");
  const std::size_t K = layer.fan_in(), N = d.per_channel(), P = d.plane();
  const std::size_t chunk = detail::conv_chunk(d);
  RowMatrix<T> col(K, std::min(chunk, d.batch) * P);
  Tensor<T> out = detail::like(input, static_cast<std::size_t>(layer.out_ch));
  ConstMatrixMap<T> wm(layer.weight.data(), layer.out_ch, K);
  for (std::size_t n0 = 0; n0 < d.batch; n0 += chunk) {
    const std::size_t n1 = std::min(d.batch, n0 + chunk), cols = (n1 - n0) * P;
    detail::im2col(input.data(), d, layer.k, col.data(), n0, n1);
    detail::StridedMap<T> om(out.data() + n0 * P, layer.out_ch, cols, Eigen::OuterStride<>(N));
    om.noalias() = wm * MatrixMap<T>(col.data(), K, cols);
  }
  MatrixMap<T> all(out.data(), layer.out_ch, N);
  for (int o = 0; o < layer.out_ch; ++o) all.row(o).array() += layer.bias[o];
  return out;
}

template <class T>
ConvGrads<T> conv2d_backward(const Tensor<T>& grad_out, const Tensor<T>& cached_input, const ConvLayer<T>& layer) {
  require(!cached_input.empty(), "conv2d_backward: missing cached forward input");
  const auto d = activation_dims(cached_input);
  const auto g = activation_dims(grad_out);
  require(g.channels == static_cast<std::size_t>(layer.out_ch) && g.batch == d.batch && g.height == d.height &&
              g.width == d.width,
          "conv2d_backward: grad_out shape " + shape_str(grad_out.shape()) + " does not match forward output");
  const std::size_t K = layer.fan_in(), N = d.per_channel(), P = d.plane();
  const std::size_t chunk = detail::conv_chunk(d);
  RowMatrix<T> col(K, std::min(chunk, d.batch) * P), gcol(col.rows(), col.cols());
  ConstMatrixMap<T> wm(layer.weight.data(), layer.out_ch, K);

  ConvGrads<T> grads{Tensor<T>(cached_input.shape()), Tensor<T>(layer.weight.shape()), Tensor<T>(layer.bias.shape())};
  MatrixMap<T> gw(grads.weight.data(), layer.out_ch, K);
  gw.setZero();
  for (std::size_t n0 = 0; n0 < d.batch; n0 += chunk) {
    const std::size_t n1 = std::min(d.batch, n0 + chunk), cols = (n1 - n0) * P;
    detail::im2col(cached_input.data(), d, layer.k, col.data(), n0, n1);
    detail::ConstStridedMap<T> gm(grad_out.data() + n0 * P, layer.out_ch, cols, Eigen::OuterStride<>(N));
    gw.noalias() += gm * MatrixMap<T>(col.data(), K, cols).transpose();
    MatrixMap<T>(gcol.data(), K, cols).noalias() = wm.transpose() * gm;
    detail::col2im(gcol.data(), d, layer.k, grads.input.data(), n0, n1);
  }
  for (int o = 0; o < layer.out_ch; ++o) {
    double s = 0;
    const T* row = grad_out.data() + static_cast<std::size_t>(o) * N;
    for (std::size_t i = 0; i < N; ++i) s += row[i];
    grads.bias[o] = static_cast<T>(s);
  }
  return grads;
}

template <class T>
Tensor<T> relu_forward(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
  return y;
}

/// Gradient through ReLU given the forward input.
template <class T>
Tensor<T> relu_backward(const Tensor<T>& grad_out, const Tensor<T>& cached_input) {
  require(grad_out.shape() == cached_input.shape(), "relu_backward: shape mismatch");
  Tensor<T> g(grad_out.shape());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = cached_input[i] > T(0) ? grad_out[i] : T(0);
  return g;
}

template <class T>
struct BatchNormLayer {
  std::vector<T> gamma, beta, running_mean, running_var;
  double epsilon = 1e-5;
  double momentum = 0.9;  // running = momentum * running + (1 - momentum) * batch

  BatchNormLayer() = default;
  explicit BatchNormLayer(std::size_t channels, double eps = 1e-5, double mom = 0.9)
      : gamma(channels, T(1)),
        beta(channels, T(0)),
        running_mean(channels, T(0)),
        running_var(channels, T(1)),
        epsilon(eps),
        momentum(mom) {}

  std::size_t channels() const { return gamma.size(); }
};

enum class BnMode { train, infer };

template <class T>
struct BatchNormCache {
  Tensor<T> xhat;
  std::vector<double> inv_std;
};

template <class T>
struct BatchNormGrads {
  Tensor<T> input;
  std::vector<T> gamma, beta;
};

/// Per-channel normalisation over (N, H, W). Training mode normalises with batch statistics
/// and folds them into the running estimates; inference uses running statistics only.
template <class T>
Tensor<T> batchnorm_forward(const Tensor<T>& x, BatchNormLayer<T>& bn, BnMode mode,
                            BatchNormCache<T>* cache = nullptr) {
  const auto d = activation_dims(x);
  require(d.channels == bn.channels(), "batchnorm: channel count mismatch");
  const std::size_t m = d.per_channel();
  require(m > 0, "batchnorm: zero-element channel");
  Tensor<T> y(x.shape());
  if (cache) {
    cache->xhat = Tensor<T>(x.shape());
    cache->inv_std.assign(d.channels, 0.0);
  }
  for (std::size_t c = 0; c < d.channels; ++c) {
    const T* xs = x.data() + c * m;
    T* ys = y.data() + c * m;
    double mean, var;
    if (mode == BnMode::train) {
      double s = 0;
      for (std::size_t i = 0; i < m; ++i) s += xs[i];
      mean = s / static_cast<double>(m);
      double ss = 0;
      for (std::size_t i = 0; i < m; ++i) ss += (xs[i] - mean) * (xs[i] - mean);
      var = ss / static_cast<double>(m);
      const double unbiased = m > 1 ? ss / static_cast<double>(m - 1) : var;
      bn.running_mean[c] = static_cast<T>(bn.momentum * bn.running_mean[c] + (1 - bn.momentum) * mean);
      bn.running_var[c] = static_cast<T>(bn.momentum * bn.running_var[c] + (1 - bn.momentum) * unbiased);
    } else {
      mean = bn.running_mean[c];
      var = bn.running_var[c];
    }
    const double inv_std = 1.0 / std::sqrt(var + bn.epsilon);
    const double g = bn.gamma[c], b = bn.beta[c];
    for (std::size_t i = 0; i < m; ++i) {
      const double xh = (xs[i] - mean) * inv_std;
      ys[i] = static_cast<T>(g * xh + b);
      if (cache) cache->xhat[c * m + i] = static_cast<T>(xh);
    }
    if (cache) cache->inv_std[c] = inv_std;
  }
  return y;
}

/// Backward pass for training-mode batchnorm.
template <class T>
BatchNormGrads<T> batchnorm_backward(const Tensor<T>& grad_out, const BatchNormCache<T>& cache,
                                     const BatchNormLayer<T>& bn) {
  require(!cache.xhat.empty(), "batchnorm_backward: missing forward cache");
  require(grad_out.shape() == cache.xhat.shape(), "batchnorm_backward: shape mismatch");
  const auto d = activation_dims(grad_out);
  const std::size_t m = d.per_channel();
  BatchNormGrads<T> g{Tensor<T>(grad_out.shape()), std::vector<T>(d.channels), std::vector<T>(d.channels)};
  for (std::size_t c = 0; c < d.channels; ++c) {
    const T* dy = grad_out.data() + c * m;
    const T* xh = cache.xhat.data() + c * m;
    double sum_dy = 0, sum_dy_xh = 0;
    for (std::size_t i = 0; i < m; ++i) {
      sum_dy += dy[i];
      sum_dy_xh += static_cast<double>(dy[i]) * xh[i];
    }
    g.gamma[c] = static_cast<T>(sum_dy_xh);
    g.beta[c] = static_cast<T>(sum_dy);
    const double gam = bn.gamma[c];
    const double scale = gam * cache.inv_std[c] / static_cast<double>(m);
    T* dx = g.input.data() + c * m;
    for (std::size_t i = 0; i < m; ++i)
      dx[i] = static_cast<T>(scale * (static_cast<double>(m) * dy[i] - sum_dy - xh[i] * sum_dy_xh));
  }
  return g;
}

}  // namespace noiseprint
