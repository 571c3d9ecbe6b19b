#pragma once

#include <algorithm>
#include <limits>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mss/random.hpp"
#include "mss/tensor.hpp"

namespace mss {

/// Gradients produced by a layer's backward pass: the gradient w.r.t. the
/// layer input plus one gradient per learnable parameter (empty for
/// parameter-free layers).
struct LayerGrad {
  Tensor input_grad;
  std::vector<std::pair<std::string, Tensor>> param_grads;

  const Tensor& param(const std::string& name) const {
    for (const auto& [n, t] : param_grads)
      if (n == name) return t;
    throw validation_error("LayerGrad: no gradient named '" + name + "'");
  }
};

namespace detail {

struct Conv2dDims {
  int n, cin, h, w, cout, k, oh, ow;
};

inline Conv2dDims conv2d_dims(const Tensor& input, const Tensor& kernels,
                              int stride, int padding) {
  require_rank(input, 4, "conv2d input");
  require_rank(kernels, 4, "conv2d kernels");
  if (stride <= 0)
    throw validation_error("conv2d: stride must be positive, got " +
                           std::to_string(stride));
  if (padding < 0)
    throw validation_error("conv2d: padding must be non-negative, got " +
                           std::to_string(padding));
  Conv2dDims d;
  d.n = input.extent(0);
  d.cin = input.extent(1);
  d.h = input.extent(2);
  d.w = input.extent(3);
  d.cout = kernels.extent(0);
  if (kernels.extent(1) != d.cin)
    throw shape_error("conv2d: kernel channel dim 1 is " +
                      std::to_string(kernels.extent(1)) +
                      " but input channel dim 1 is " + std::to_string(d.cin));
  if (kernels.extent(2) != kernels.extent(3))
    throw shape_error("conv2d: kernel must be square, got " +
                      shape_string(kernels.shape()));
  d.k = kernels.extent(2);
  if (d.k > d.h + 2 * padding)
    throw shape_error("conv2d: kernel extent " + std::to_string(d.k) +
                      " exceeds padded input height " +
                      std::to_string(d.h + 2 * padding));
  if (d.k > d.w + 2 * padding)
    throw shape_error("conv2d: kernel extent " + std::to_string(d.k) +
                      " exceeds padded input width " +
                      std::to_string(d.w + 2 * padding));
  if ((d.h + 2 * padding - d.k) % stride != 0)
    throw shape_error("conv2d: stride does not divide padded height span " +
                      std::to_string(d.h + 2 * padding - d.k));
  if ((d.w + 2 * padding - d.k) % stride != 0)
    throw shape_error("conv2d: stride does not divide padded width span " +
                      std::to_string(d.w + 2 * padding - d.k));
  d.oh = (d.h + 2 * padding - d.k) / stride + 1;
  d.ow = (d.w + 2 * padding - d.k) / stride + 1;
  return d;
}

/// Unrolls one batch item into columns: col[(ci*k+ky)*k+kx][oy*ow+ox].
inline void im2col(const float* in, const Conv2dDims& d, int stride,
                   int padding, float* col) {
  const std::size_t plane = static_cast<std::size_t>(d.h) * d.w;
  const std::size_t ocols = static_cast<std::size_t>(d.oh) * d.ow;
  for (int ci = 0; ci < d.cin; ++ci) {
    const float* src = in + static_cast<std::size_t>(ci) * plane;
    for (int ky = 0; ky < d.k; ++ky) {
      for (int kx = 0; kx < d.k; ++kx) {
        float* dst =
            col + (static_cast<std::size_t>(ci) * d.k * d.k +
                   static_cast<std::size_t>(ky) * d.k + kx) *
                      ocols;
        for (int oy = 0; oy < d.oh; ++oy) {
          const int iy = oy * stride - padding + ky;
          float* row = dst + static_cast<std::size_t>(oy) * d.ow;
          if (iy < 0 || iy >= d.h) {
            std::fill(row, row + d.ow, 0.0f);
            continue;
          }
          const float* srow = src + static_cast<std::size_t>(iy) * d.w;
          for (int ox = 0; ox < d.ow; ++ox) {
            const int ix = ox * stride - padding + kx;
            row[ox] = (ix >= 0 && ix < d.w) ? srow[ix] : 0.0f;
          }
        }
      }
    }
  }
}

inline void col2im_add(const float* col, const Conv2dDims& d, int stride,
                       int padding, float* in_grad) {
  const std::size_t plane = static_cast<std::size_t>(d.h) * d.w;
  const std::size_t ocols = static_cast<std::size_t>(d.oh) * d.ow;
  for (int ci = 0; ci < d.cin; ++ci) {
    float* dst = in_grad + static_cast<std::size_t>(ci) * plane;
    for (int ky = 0; ky < d.k; ++ky) {
      for (int kx = 0; kx < d.k; ++kx) {
        const float* src =
            col + (static_cast<std::size_t>(ci) * d.k * d.k +
                   static_cast<std::size_t>(ky) * d.k + kx) *
                      ocols;
        for (int oy = 0; oy < d.oh; ++oy) {
          const int iy = oy * stride - padding + ky;
          if (iy < 0 || iy >= d.h) continue;
          const float* row = src + static_cast<std::size_t>(oy) * d.ow;
          float* drow = dst + static_cast<std::size_t>(iy) * d.w;
          for (int ox = 0; ox < d.ow; ++ox) {
            const int ix = ox * stride - padding + kx;
            if (ix >= 0 && ix < d.w) drow[ix] += row[ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

/// Standard cross-correlation with zero padding.
/// input [N,Cin,H,W], kernels [Cout,Cin,k,k], bias [Cout].
inline Tensor conv2d(const Tensor& input, const Tensor& kernels,
                     const Tensor& bias, int stride, int padding) {
  const auto d = detail::conv2d_dims(input, kernels, stride, padding);
  require_rank(bias, 1, "conv2d bias");
  if (bias.extent(0) != d.cout)
    throw shape_error("conv2d: bias extent " + std::to_string(bias.extent(0)) +
                      " does not match output channels " +
                      std::to_string(d.cout));

  Tensor out({d.n, d.cout, d.oh, d.ow});
  const std::size_t rows = static_cast<std::size_t>(d.cin) * d.k * d.k;
  const std::size_t ocols = static_cast<std::size_t>(d.oh) * d.ow;
  std::vector<float> col(rows * ocols);
  const std::size_t in_stride = static_cast<std::size_t>(d.cin) * d.h * d.w;
  const std::size_t out_stride =
      static_cast<std::size_t>(d.cout) * d.oh * d.ow;

  for (int n = 0; n < d.n; ++n) {
    detail::im2col(input.data() + n * in_stride, d, stride, padding,
                   col.data());
    float* obase = out.data() + n * out_stride;
    for (int co = 0; co < d.cout; ++co) {
      float* dst = obase + static_cast<std::size_t>(co) * ocols;
      std::fill(dst, dst + ocols, bias[static_cast<std::size_t>(co)]);
      const float* wrow = kernels.data() + static_cast<std::size_t>(co) * rows;
      for (std::size_t r = 0; r < rows; ++r) {
        const float wv = wrow[r];
        if (wv == 0.0f) continue;
        const float* src = col.data() + r * ocols;
        for (std::size_t j = 0; j < ocols; ++j) dst[j] += wv * src[j];
      }
    }
  }
  return out;
}

/// Analytic gradients of conv2d w.r.t. input ("input"), kernels ("kernels")
/// and bias ("bias").
inline LayerGrad conv2d_backward(const Tensor& input, const Tensor& kernels,
                                 int stride, int padding,
                                 const Tensor& upstream) {
  const auto d = detail::conv2d_dims(input, kernels, stride, padding);
  if (upstream.shape() != std::vector<int>{d.n, d.cout, d.oh, d.ow})
    throw shape_error("conv2d_backward: upstream shape " +
                      shape_string(upstream.shape()) + " does not match " +
                      shape_string({d.n, d.cout, d.oh, d.ow}));

  Tensor din(input.shape());
  Tensor dk(kernels.shape());
  Tensor db({d.cout});

  const std::size_t rows = static_cast<std::size_t>(d.cin) * d.k * d.k;
  const std::size_t ocols = static_cast<std::size_t>(d.oh) * d.ow;
  std::vector<float> col(rows * ocols);
  std::vector<float> dcol(rows * ocols);
  const std::size_t in_stride = static_cast<std::size_t>(d.cin) * d.h * d.w;
  const std::size_t out_stride =
      static_cast<std::size_t>(d.cout) * d.oh * d.ow;

  for (int n = 0; n < d.n; ++n) {
    detail::im2col(input.data() + n * in_stride, d, stride, padding,
                   col.data());
    const float* ubase = upstream.data() + n * out_stride;

    for (int co = 0; co < d.cout; ++co) {
      const float* urow = ubase + static_cast<std::size_t>(co) * ocols;
      double bsum = 0.0;
      for (std::size_t j = 0; j < ocols; ++j) bsum += urow[j];
      db[static_cast<std::size_t>(co)] += static_cast<float>(bsum);

      float* krow = dk.data() + static_cast<std::size_t>(co) * rows;
      for (std::size_t r = 0; r < rows; ++r) {
        const float* src = col.data() + r * ocols;
        double acc = 0.0;
        for (std::size_t j = 0; j < ocols; ++j) acc += urow[j] * src[j];
        krow[r] += static_cast<float>(acc);
      }
    }

    std::fill(dcol.begin(), dcol.end(), 0.0f);
    for (std::size_t r = 0; r < rows; ++r) {
      float* drow = dcol.data() + r * ocols;
      for (int co = 0; co < d.cout; ++co) {
        const float wv = kernels[static_cast<std::size_t>(co) * rows + r];
        if (wv == 0.0f) continue;
        const float* urow = ubase + static_cast<std::size_t>(co) * ocols;
        for (std::size_t j = 0; j < ocols; ++j) drow[j] += wv * urow[j];
      }
    }
    detail::col2im_add(dcol.data(), d, stride, padding,
                       din.data() + n * in_stride);
  }

  LayerGrad g;
  g.input_grad = std::move(din);
  g.param_grads.emplace_back("kernels", std::move(dk));
  g.param_grads.emplace_back("bias", std::move(db));
  return g;
}

namespace detail {

inline void conv_transpose2d_check(const Tensor& input, const Tensor& kernels) {
  require_rank(input, 4, "conv_transpose2d input");
  require_rank(kernels, 4, "conv_transpose2d kernels");
  if (kernels.extent(2) != 2 || kernels.extent(3) != 2)
    throw shape_error("conv_transpose2d: kernel spatial extents must be 2x2, got " +
                      shape_string(kernels.shape()));
  if (kernels.extent(0) != input.extent(1))
    throw shape_error("conv_transpose2d: kernel dim 0 is " +
                      std::to_string(kernels.extent(0)) +
                      " but input channel dim 1 is " +
                      std::to_string(input.extent(1)));
}

}  // namespace detail

/// Exact transpose of the stride-2 convolution operator; the only
/// configuration the architecture needs (2x2 kernel, stride 2), so windows
/// never overlap. input [N,Cin,H,W], kernels [Cin,Cout,2,2] -> [N,Cout,2H,2W].
inline Tensor conv_transpose2d(const Tensor& input, const Tensor& kernels) {
  detail::conv_transpose2d_check(input, kernels);
  const int n = input.extent(0), cin = input.extent(1);
  const int h = input.extent(2), w = input.extent(3);
  const int cout = kernels.extent(1);

  Tensor out({n, cout, 2 * h, 2 * w});
  for (int b = 0; b < n; ++b) {
    for (int co = 0; co < cout; ++co) {
      for (int ci = 0; ci < cin; ++ci) {
        const float k00 = kernels.at(ci, co, 0, 0);
        const float k01 = kernels.at(ci, co, 0, 1);
        const float k10 = kernels.at(ci, co, 1, 0);
        const float k11 = kernels.at(ci, co, 1, 1);
        for (int y = 0; y < h; ++y) {
          for (int x = 0; x < w; ++x) {
            const float v = input.at(b, ci, y, x);
            out.at(b, co, 2 * y, 2 * x) += v * k00;
            out.at(b, co, 2 * y, 2 * x + 1) += v * k01;
            out.at(b, co, 2 * y + 1, 2 * x) += v * k10;
            out.at(b, co, 2 * y + 1, 2 * x + 1) += v * k11;
          }
        }
      }
    }
  }
  return out;
}

inline LayerGrad conv_transpose2d_backward(const Tensor& input,
                                           const Tensor& kernels,
                                           const Tensor& upstream) {
  detail::conv_transpose2d_check(input, kernels);
  const int n = input.extent(0), cin = input.extent(1);
  const int h = input.extent(2), w = input.extent(3);
  const int cout = kernels.extent(1);
  if (upstream.shape() != std::vector<int>{n, cout, 2 * h, 2 * w})
    throw shape_error("conv_transpose2d_backward: upstream shape " +
                      shape_string(upstream.shape()) + " does not match " +
                      shape_string({n, cout, 2 * h, 2 * w}));

  Tensor din(input.shape());
  Tensor dk(kernels.shape());
  for (int b = 0; b < n; ++b) {
    for (int ci = 0; ci < cin; ++ci) {
      for (int co = 0; co < cout; ++co) {
        const float k00 = kernels.at(ci, co, 0, 0);
        const float k01 = kernels.at(ci, co, 0, 1);
        const float k10 = kernels.at(ci, co, 1, 0);
        const float k11 = kernels.at(ci, co, 1, 1);
        double g00 = 0.0, g01 = 0.0, g10 = 0.0, g11 = 0.0;
        for (int y = 0; y < h; ++y) {
          for (int x = 0; x < w; ++x) {
            const float u00 = upstream.at(b, co, 2 * y, 2 * x);
            const float u01 = upstream.at(b, co, 2 * y, 2 * x + 1);
            const float u10 = upstream.at(b, co, 2 * y + 1, 2 * x);
            const float u11 = upstream.at(b, co, 2 * y + 1, 2 * x + 1);
            const float v = input.at(b, ci, y, x);
            din.at(b, ci, y, x) +=
                u00 * k00 + u01 * k01 + u10 * k10 + u11 * k11;
            g00 += static_cast<double>(v) * u00;
            g01 += static_cast<double>(v) * u01;
            g10 += static_cast<double>(v) * u10;
            g11 += static_cast<double>(v) * u11;
          }
        }
        dk.at(ci, co, 0, 0) += static_cast<float>(g00);
        dk.at(ci, co, 0, 1) += static_cast<float>(g01);
        dk.at(ci, co, 1, 0) += static_cast<float>(g10);
        dk.at(ci, co, 1, 1) += static_cast<float>(g11);
      }
    }
  }

  LayerGrad g;
  g.input_grad = std::move(din);
  g.param_grads.emplace_back("kernels", std::move(dk));
  return g;
}

struct MaxPoolResult {
  Tensor output;
  /// Flat index into the input tensor of the winning element, one per output
  /// element (row-major over the output).
  std::vector<std::uint32_t> argmax;
};

/// 2x2 max pooling with stride 2. Ties break to the first element in the
/// row-major window scan so backward routing is deterministic.
inline MaxPoolResult maxpool2d(const Tensor& input) {
  require_rank(input, 4, "maxpool2d input");
  const int n = input.extent(0), c = input.extent(1);
  const int h = input.extent(2), w = input.extent(3);
  if (h % 2 != 0)
    throw shape_error("maxpool2d: input height must be even, got " +
                      std::to_string(h));
  if (w % 2 != 0)
    throw shape_error("maxpool2d: input width must be even, got " +
                      std::to_string(w));

  MaxPoolResult r;
  r.output = Tensor({n, c, h / 2, w / 2});
  r.argmax.resize(r.output.size());
  std::size_t o = 0;
  for (int b = 0; b < n; ++b) {
    for (int ch = 0; ch < c; ++ch) {
      const std::size_t base =
          (static_cast<std::size_t>(b) * c + ch) * h * w;
      for (int y = 0; y < h; y += 2) {
        for (int x = 0; x < w; x += 2) {
          const std::size_t i00 = base + static_cast<std::size_t>(y) * w + x;
          const std::size_t idx[4] = {i00, i00 + 1, i00 + w,
                                      i00 + w + 1};
          std::size_t best = idx[0];
          float bv = input[idx[0]];
          for (int t = 1; t < 4; ++t) {
            if (input[idx[t]] > bv) {
              bv = input[idx[t]];
              best = idx[t];
            }
          }
          r.output[o] = bv;
          r.argmax[o] = static_cast<std::uint32_t>(best);
          ++o;
        }
      }
    }
  }
  return r;
}

/// Scatters upstream gradients to the recorded argmax positions.
inline Tensor maxpool2d_backward(const std::vector<int>& input_shape,
                                 const std::vector<std::uint32_t>& argmax,
                                 const Tensor& upstream) {
  if (argmax.size() != upstream.size())
    throw shape_error("maxpool2d_backward: argmax count " +
                      std::to_string(argmax.size()) +
                      " does not match upstream size " +
                      std::to_string(upstream.size()));
  Tensor din(input_shape);
  for (std::size_t i = 0; i < argmax.size(); ++i)
    din[argmax[i]] += upstream[i];
  return din;
}

inline Tensor relu(const Tensor& input) {
  Tensor out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i)
    out[i] = input[i] > 0.0f ? input[i] : 0.0f;
  return out;
}

/// Subgradient at exactly 0 is 0.
inline Tensor relu_backward(const Tensor& pre_activation,
                            const Tensor& upstream) {
  require_same_shape(pre_activation, upstream, "relu_backward");
  Tensor din(pre_activation.shape());
  for (std::size_t i = 0; i < din.size(); ++i)
    din[i] = pre_activation[i] > 0.0f ? upstream[i] : 0.0f;
  return din;
}

/// Channels of a precede channels of b.
inline Tensor concat_channels(const Tensor& a, const Tensor& b) {
  require_rank(a, 4, "concat_channels a");
  require_rank(b, 4, "concat_channels b");
  for (int axis : {0, 2, 3}) {
    if (a.extent(axis) != b.extent(axis))
      throw shape_error("concat_channels: extent mismatch at axis " +
                        std::to_string(axis) + ": " +
                        std::to_string(a.extent(axis)) + " vs " +
                        std::to_string(b.extent(axis)));
  }
  const int n = a.extent(0), ca = a.extent(1), cb = b.extent(1);
  const int h = a.extent(2), w = a.extent(3);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  Tensor out({n, ca + cb, h, w});
  for (int nb = 0; nb < n; ++nb) {
    std::copy(a.data() + nb * ca * plane, a.data() + (nb + 1) * ca * plane,
              out.data() + static_cast<std::size_t>(nb) * (ca + cb) * plane);
    std::copy(b.data() + nb * cb * plane, b.data() + (nb + 1) * cb * plane,
              out.data() + (static_cast<std::size_t>(nb) * (ca + cb) + ca) *
                               plane);
  }
  return out;
}

/// Splits the upstream gradient back into the two concatenated parts.
inline std::pair<Tensor, Tensor> concat_channels_backward(
    const Tensor& upstream, int channels_a, int channels_b) {
  require_rank(upstream, 4, "concat_channels_backward upstream");
  if (upstream.extent(1) != channels_a + channels_b)
    throw shape_error("concat_channels_backward: channel dim 1 is " +
                      std::to_string(upstream.extent(1)) + ", expected " +
                      std::to_string(channels_a + channels_b));
  const int n = upstream.extent(0);
  const int h = upstream.extent(2), w = upstream.extent(3);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  Tensor ga({n, channels_a, h, w});
  Tensor gb({n, channels_b, h, w});
  const int ct = channels_a + channels_b;
  for (int nb = 0; nb < n; ++nb) {
    const float* src = upstream.data() + static_cast<std::size_t>(nb) * ct * plane;
    std::copy(src, src + channels_a * plane,
              ga.data() + static_cast<std::size_t>(nb) * channels_a * plane);
    std::copy(src + channels_a * plane, src + ct * plane,
              gb.data() + static_cast<std::size_t>(nb) * channels_b * plane);
  }
  return {std::move(ga), std::move(gb)};
}

/// Overflow-safe logistic function; never exponentiates a positive argument.
/// The mathematical value is strictly inside (0,1) for finite input, so
/// results that round to 0 or 1 are nudged to the nearest interior float.
inline float sigmoid_scalar(float x) {
  float r;
  if (x >= 0.0f) {
    const float e = std::exp(-x);
    r = 1.0f / (1.0f + e);
  } else {
    const float e = std::exp(x);
    r = e / (1.0f + e);
  }
  if (r <= 0.0f) return std::numeric_limits<float>::denorm_min();
  if (r >= 1.0f) return 1.0f - std::numeric_limits<float>::epsilon() / 2.0f;
  return r;
}

inline Tensor sigmoid(const Tensor& input) {
  Tensor out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i)
    out[i] = sigmoid_scalar(input[i]);
  return out;
}

namespace detail {

inline void bce_check(const Tensor& logits, const Tensor& targets) {
  require_same_shape(logits, targets, "bce_with_logits");
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const float t = targets[i];
    if (t != 0.0f && t != 1.0f)
      throw validation_error(
          "bce_with_logits: target at flat index " + std::to_string(i) +
          " is " + std::to_string(t) + ", expected 0 or 1");
  }
}

}  // namespace detail

/// Mean over all elements of max(x,0) - x*t + log(1 + e^(-|x|)).
inline double bce_with_logits(const Tensor& logits, const Tensor& targets) {
  detail::bce_check(logits, targets);
  double acc = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double x = logits[i];
    const double t = targets[i];
    acc += std::max(x, 0.0) - x * t + std::log1p(std::exp(-std::abs(x)));
  }
  return acc / static_cast<double>(logits.size());
}

/// d(mean BCE)/d(logit) = (sigmoid(logit) - target) / count.
inline Tensor bce_with_logits_backward(const Tensor& logits,
                                       const Tensor& targets) {
  detail::bce_check(logits, targets);
  Tensor g(logits.shape());
  const float inv = 1.0f / static_cast<float>(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i)
    g[i] = (sigmoid_scalar(logits[i]) - targets[i]) * inv;
  return g;
}

/// He-normal initialization: N(0, sqrt(2 / fan_in)), deterministic per seed.
inline Tensor he_init(const std::vector<int>& shape, int fan_in,
                      std::uint64_t seed) {
  if (fan_in < 1)
    throw validation_error("he_init: fan_in must be >= 1, got " +
                           std::to_string(fan_in));
  Tensor t(shape);
  Rng rng(seed);
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (std::size_t i = 0; i < t.size(); ++i)
    t[i] = static_cast<float>(rng.normal(0.0, stddev));
  return t;
}

}  // namespace mss
