#pragma once

// Forward and backward kernels for the layer primitives of the network.
// All kernels are templated on the scalar type; float is used for training and
// inference, double for finite-difference checks. Every output element is
// produced by exactly one loop iteration with a fixed accumulation order, so
// results do not depend on the worker-thread count.

#include "cgnet/errors.hpp"
#include "cgnet/parallel.hpp"
#include "cgnet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

namespace cgnet {

template <typename Scalar>
using RowMajorMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// ---------------------------------------------------------------------------
// Convolution

struct ConvSpec {
  int in_channels = 1;
  int out_channels = 1;
  int kernel_h = 1;
  int kernel_w = 1;
  int stride = 1;
  int padding = 0;
  int dilation = 1;
  int groups = 1;
  bool has_bias = false;

  /// k x k convolution whose padding keeps the spatial size at stride 1.
  static ConvSpec square(int in, int out, int k, int stride = 1, int dilation = 1, int groups = 1, bool bias = false) {
    return ConvSpec{in, out, k, k, stride, dilation * (k - 1) / 2, dilation, groups, bias};
  }
  static ConvSpec pointwise(int in, int out, bool bias = false) { return square(in, out, 1, 1, 1, 1, bias); }
  static ConvSpec channelwise(int channels, int dilation) {
    return square(channels, channels, 3, 1, dilation, channels, false);
  }

  bool is_channelwise() const { return groups == in_channels && groups == out_channels; }
  bool is_plain_pointwise() const {
    return kernel_h == 1 && kernel_w == 1 && stride == 1 && padding == 0 && groups == 1;
  }
  int in_per_group() const { return in_channels / groups; }
  int out_per_group() const { return out_channels / groups; }
  Dims weight_dims() const { return Dims{out_channels, in_channels / groups, kernel_h, kernel_w}; }

  int out_extent(int in, int k) const { return (in + 2 * padding - dilation * (k - 1) - 1) / stride + 1; }
  int out_h(int h) const { return out_extent(h, kernel_h); }
  int out_w(int w) const { return out_extent(w, kernel_w); }

  void validate() const {
    detail::require(in_channels >= 1 && out_channels >= 1 && groups >= 1, "ConvSpec: channels and groups must be positive");
    detail::require(in_channels % groups == 0 && out_channels % groups == 0,
                    "ConvSpec: channels " + std::to_string(in_channels) + "->" + std::to_string(out_channels) +
                        " not divisible by groups " + std::to_string(groups));
    detail::require(kernel_h >= 1 && kernel_w >= 1, "ConvSpec: kernel extents must be positive");
    detail::require(stride >= 1 && dilation >= 1 && padding >= 0, "ConvSpec: stride/dilation must be >= 1, padding >= 0");
  }
};

template <typename Scalar>
struct ConvGrads {
  Tensor<Scalar> x;
  Tensor<Scalar> w;
  std::optional<Tensor<Scalar>> b;
};

namespace detail {

/// Output columns j whose input column j*s - p + v*d lies inside [0, width).
inline std::pair<int, int> valid_range(int width, int out_width, int offset, int stride) {
  // offset = v*d - p; need 0 <= j*s + offset < width
  int lo = offset >= 0 ? 0 : (-offset + stride - 1) / stride;
  int hi = width - 1 - offset < 0 ? 0 : (width - 1 - offset) / stride + 1;
  lo = std::min(lo, out_width);
  hi = std::clamp(hi, lo, out_width);
  return {lo, hi};
}

template <typename Scalar>
void check_conv_inputs(const Tensor<Scalar>& x, const Tensor<Scalar>& w, const Tensor<Scalar>* b, const ConvSpec& spec) {
  spec.validate();
  require(x.rank() == 4 && x.c() == spec.in_channels,
          "conv2d: input " + x.dims().str() + " does not have " + std::to_string(spec.in_channels) + " channels");
  require(w.dims() == spec.weight_dims(), "conv2d: weight " + w.dims().str() + " expected " + spec.weight_dims().str());
  require((b != nullptr) == spec.has_bias, "conv2d: bias presence does not match spec");
  if (b != nullptr) require(b->dims() == Dims{spec.out_channels}, "conv2d: bias dims " + b->dims().str());
  require(spec.out_h(x.h()) >= 1 && spec.out_w(x.w()) >= 1, "conv2d: empty output for input " + x.dims().str());
}

}  // namespace detail

/// Direct grouped/dilated/strided convolution. Per output element the sum over
/// (input channel, kernel row, kernel column) runs in lexicographic order.
template <typename Scalar>
Tensor<Scalar> conv2d_forward(const Tensor<Scalar>& x, const Tensor<Scalar>& w, const Tensor<Scalar>* b,
                              const ConvSpec& spec) {
  detail::check_conv_inputs(x, w, b, spec);
  const int N = x.n(), H = x.h(), W = x.w();
  const int Ho = spec.out_h(H), Wo = spec.out_w(W);
  Tensor<Scalar> out(Dims{N, spec.out_channels, Ho, Wo});

  if (spec.is_plain_pointwise()) {
    using ConstMap = Eigen::Map<const RowMajorMatrix<Scalar>>;
    const ConstMap wm(w.data(), spec.out_channels, spec.in_channels);
    for (int n = 0; n < N; ++n) {
      const ConstMap xm(x.plane(n, 0), spec.in_channels, H * W);
      Eigen::Map<RowMajorMatrix<Scalar>> om(out.plane(n, 0), spec.out_channels, H * W);
      om.noalias() = wm * xm;
      if (b != nullptr) om.colwise() += Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>(b->data(), spec.out_channels);
    }
    return out;
  }

  const int cin_g = spec.in_per_group(), cout_g = spec.out_per_group();
  const int kh = spec.kernel_h, kw = spec.kernel_w, s = spec.stride, p = spec.padding, d = spec.dilation;
  std::vector<std::pair<int, int>> col_range(static_cast<std::size_t>(kw));
  for (int v = 0; v < kw; ++v) col_range[static_cast<std::size_t>(v)] = detail::valid_range(W, Wo, v * d - p, s);

  const std::int64_t work = static_cast<std::int64_t>(N) * spec.out_channels * Ho * Wo * cin_g * kh * kw;
  parallel_for(static_cast<std::int64_t>(N) * spec.out_channels, work, [&](std::int64_t idx) {
    const int n = static_cast<int>(idx / spec.out_channels);
    const int o = static_cast<int>(idx % spec.out_channels);
    const int group = o / cout_g;
    Scalar* op = out.plane(n, o);
    std::fill_n(op, static_cast<std::size_t>(Ho) * Wo, b != nullptr ? (*b)[static_cast<std::size_t>(o)] : Scalar(0));
    for (int ci = 0; ci < cin_g; ++ci) {
      const Scalar* xp = x.plane(n, group * cin_g + ci);
      const Scalar* wp = w.data() + (static_cast<std::size_t>(o) * cin_g + ci) * kh * kw;
      for (int u = 0; u < kh; ++u) {
        for (int v = 0; v < kw; ++v) {
          const Scalar wv = wp[u * kw + v];
          const auto [jlo, jhi] = col_range[static_cast<std::size_t>(v)];
          const int col_off = v * d - p;
          for (int i = 0; i < Ho; ++i) {
            const int ih = i * s - p + u * d;
            if (ih < 0 || ih >= H) continue;
            const Scalar* xrow = xp + static_cast<std::size_t>(ih) * W;
            Scalar* orow = op + static_cast<std::size_t>(i) * Wo;
            if (s == 1) {
              const Scalar* xs = xrow + col_off;
              for (int j = jlo; j < jhi; ++j) orow[j] += wv * xs[j];
            } else {
              for (int j = jlo; j < jhi; ++j) orow[j] += wv * xrow[j * s + col_off];
            }
          }
        }
      }
    }
  });
  detail::debug_check_finite(out, "conv2d_forward");
  return out;
}

/// Exact adjoint of conv2d_forward.
template <typename Scalar>
ConvGrads<Scalar> conv2d_backward(const Tensor<Scalar>& grad_out, const Tensor<Scalar>& x, const Tensor<Scalar>& w,
                                  const ConvSpec& spec, bool need_grad_x = true) {
  detail::check_conv_inputs<Scalar>(x, w, nullptr, ConvSpec{spec.in_channels, spec.out_channels, spec.kernel_h, spec.kernel_w,
                                                    spec.stride, spec.padding, spec.dilation, spec.groups, false});
  const int N = x.n(), H = x.h(), W = x.w();
  const int Ho = spec.out_h(H), Wo = spec.out_w(W);
  detail::require(grad_out.dims() == Dims{N, spec.out_channels, Ho, Wo},
                  "conv2d_backward: grad " + grad_out.dims().str() + " does not match forward output");
  ConvGrads<Scalar> g;
  g.w = Tensor<Scalar>(w.dims());
  if (need_grad_x) g.x = Tensor<Scalar>(x.dims());
  if (spec.has_bias) {
    Tensor<Scalar> gb(Dims{spec.out_channels});
    for (int o = 0; o < spec.out_channels; ++o) {
      Scalar acc = 0;
      for (int n = 0; n < N; ++n) {
        const Scalar* gp = grad_out.plane(n, o);
        for (std::size_t k = 0; k < grad_out.plane_size(); ++k) acc += gp[k];
      }
      gb[static_cast<std::size_t>(o)] = acc;
    }
    g.b = std::move(gb);
  }

  if (spec.is_plain_pointwise()) {
    using ConstMap = Eigen::Map<const RowMajorMatrix<Scalar>>;
    const ConstMap wm(w.data(), spec.out_channels, spec.in_channels);
    Eigen::Map<RowMajorMatrix<Scalar>> gw(g.w.data(), spec.out_channels, spec.in_channels);
    for (int n = 0; n < N; ++n) {
      const ConstMap gm(grad_out.plane(n, 0), spec.out_channels, H * W);
      const ConstMap xm(x.plane(n, 0), spec.in_channels, H * W);
      gw.noalias() += gm * xm.transpose();
      if (need_grad_x) {
        Eigen::Map<RowMajorMatrix<Scalar>> gx(g.x.plane(n, 0), spec.in_channels, H * W);
        gx.noalias() = wm.transpose() * gm;
      }
    }
    return g;
  }

  const int cin_g = spec.in_per_group(), cout_g = spec.out_per_group();
  const int kh = spec.kernel_h, kw = spec.kernel_w, s = spec.stride, p = spec.padding, d = spec.dilation;
  std::vector<std::pair<int, int>> col_range(static_cast<std::size_t>(kw));
  for (int v = 0; v < kw; ++v) col_range[static_cast<std::size_t>(v)] = detail::valid_range(W, Wo, v * d - p, s);
  const std::int64_t work = static_cast<std::int64_t>(N) * spec.out_channels * Ho * Wo * cin_g * kh * kw;

  // Weight gradient: one task per output channel, sum over (n, i, j) in order.
  parallel_for(spec.out_channels, work, [&](std::int64_t oi) {
    const int o = static_cast<int>(oi);
    const int group = o / cout_g;
    for (int ci = 0; ci < cin_g; ++ci) {
      for (int u = 0; u < kh; ++u) {
        for (int v = 0; v < kw; ++v) {
          const auto [jlo, jhi] = col_range[static_cast<std::size_t>(v)];
          const int col_off = v * d - p;
          Scalar acc = 0;
          for (int n = 0; n < N; ++n) {
            const Scalar* xp = x.plane(n, group * cin_g + ci);
            const Scalar* gp = grad_out.plane(n, o);
            for (int i = 0; i < Ho; ++i) {
              const int ih = i * s - p + u * d;
              if (ih < 0 || ih >= H) continue;
              const Scalar* xrow = xp + static_cast<std::size_t>(ih) * W;
              const Scalar* grow = gp + static_cast<std::size_t>(i) * Wo;
              for (int j = jlo; j < jhi; ++j) acc += grow[j] * xrow[j * s + col_off];
            }
          }
          g.w[((static_cast<std::size_t>(o) * cin_g + ci) * kh + u) * kw + v] = acc;
        }
      }
    }
  });

  if (!need_grad_x) return g;

  // Input gradient: one task per (n, input channel) plane.
  parallel_for(static_cast<std::int64_t>(N) * spec.in_channels, work, [&](std::int64_t idx) {
    const int n = static_cast<int>(idx / spec.in_channels);
    const int c = static_cast<int>(idx % spec.in_channels);
    const int group = c / cin_g, ci = c % cin_g;
    Scalar* gxp = g.x.plane(n, c);
    for (int o = group * cout_g; o < (group + 1) * cout_g; ++o) {
      const Scalar* gp = grad_out.plane(n, o);
      const Scalar* wp = w.data() + (static_cast<std::size_t>(o) * cin_g + ci) * kh * kw;
      for (int u = 0; u < kh; ++u) {
        for (int v = 0; v < kw; ++v) {
          const Scalar wv = wp[u * kw + v];
          const auto [jlo, jhi] = col_range[static_cast<std::size_t>(v)];
          const int col_off = v * d - p;
          for (int i = 0; i < Ho; ++i) {
            const int ih = i * s - p + u * d;
            if (ih < 0 || ih >= H) continue;
            Scalar* xrow = gxp + static_cast<std::size_t>(ih) * W;
            const Scalar* grow = gp + static_cast<std::size_t>(i) * Wo;
            if (s == 1) {
              Scalar* xs = xrow + col_off;
              for (int j = jlo; j < jhi; ++j) xs[j] += wv * grow[j];
            } else {
              for (int j = jlo; j < jhi; ++j) xrow[j * s + col_off] += wv * grow[j];
            }
          }
        }
      }
    }
  });
  return g;
}

// ---------------------------------------------------------------------------
// Batch normalization

struct BatchNormOptions {
  double eps = 1e-5;
  double momentum = 0.1;
};

/// Values saved by a training-mode forward for the backward pass.
template <typename Scalar>
struct BatchNormSaved {
  Tensor<Scalar> xhat;
  std::vector<double> inv_std;
};

/// Training mode: normalizes with batch statistics (biased variance) and
/// blends them into the running statistics.
template <typename Scalar>
Tensor<Scalar> batchnorm_forward_train(const Tensor<Scalar>& x, const Tensor<Scalar>& gamma, const Tensor<Scalar>& beta,
                                       Tensor<Scalar>& running_mean, Tensor<Scalar>& running_var,
                                       const BatchNormOptions& opt, BatchNormSaved<Scalar>* saved) {
  detail::require(x.rank() == 4, "batchnorm: rank-4 input required");
  const int C = x.c();
  detail::require(gamma.size() == static_cast<std::size_t>(C) && beta.size() == gamma.size() &&
                      running_mean.size() == gamma.size() && running_var.size() == gamma.size(),
                  "batchnorm: parameter length does not match " + std::to_string(C) + " channels");
  const std::size_t hw = x.plane_size();
  const std::size_t m = static_cast<std::size_t>(x.n()) * hw;
  detail::require(m >= 2, "batchnorm: training mode needs at least 2 values per channel, got " + std::to_string(m));

  Tensor<Scalar> out(x.dims());
  Tensor<Scalar> xhat(x.dims());
  std::vector<double> inv_std(static_cast<std::size_t>(C));
  parallel_for(C, static_cast<std::int64_t>(x.size()) * 4, [&](std::int64_t ci) {
    const int c = static_cast<int>(ci);
    double sum = 0;
    for (int n = 0; n < x.n(); ++n) {
      const Scalar* xp = x.plane(n, c);
      for (std::size_t k = 0; k < hw; ++k) sum += xp[k];
    }
    const double mean = sum / static_cast<double>(m);
    double sq = 0;
    for (int n = 0; n < x.n(); ++n) {
      const Scalar* xp = x.plane(n, c);
      for (std::size_t k = 0; k < hw; ++k) {
        const double dx = xp[k] - mean;
        sq += dx * dx;
      }
    }
    const double var = sq / static_cast<double>(m);
    const double is = 1.0 / std::sqrt(var + opt.eps);
    inv_std[static_cast<std::size_t>(c)] = is;
    const double ga = gamma[static_cast<std::size_t>(c)], be = beta[static_cast<std::size_t>(c)];
    for (int n = 0; n < x.n(); ++n) {
      const Scalar* xp = x.plane(n, c);
      Scalar* hp = xhat.plane(n, c);
      Scalar* op = out.plane(n, c);
      for (std::size_t k = 0; k < hw; ++k) {
        const double xh = (xp[k] - mean) * is;
        hp[k] = static_cast<Scalar>(xh);
        op[k] = static_cast<Scalar>(ga * xh + be);
      }
    }
    auto& rm = running_mean[static_cast<std::size_t>(c)];
    auto& rv = running_var[static_cast<std::size_t>(c)];
    rm = static_cast<Scalar>((1.0 - opt.momentum) * rm + opt.momentum * mean);
    rv = static_cast<Scalar>((1.0 - opt.momentum) * rv + opt.momentum * var);
  });
  if (saved != nullptr) {
    saved->xhat = std::move(xhat);
    saved->inv_std = std::move(inv_std);
  }
  return out;
}

/// Inference mode: normalizes with the running statistics.
template <typename Scalar>
Tensor<Scalar> batchnorm_forward_infer(const Tensor<Scalar>& x, const Tensor<Scalar>& gamma, const Tensor<Scalar>& beta,
                                       const Tensor<Scalar>& running_mean, const Tensor<Scalar>& running_var,
                                       const BatchNormOptions& opt) {
  detail::require(x.rank() == 4 && gamma.size() == static_cast<std::size_t>(x.c()) && beta.size() == gamma.size() &&
                      running_mean.size() == gamma.size() && running_var.size() == gamma.size(),
                  "batchnorm: parameter length does not match input " + x.dims().str());
  Tensor<Scalar> out(x.dims());
  const auto hw = static_cast<Eigen::Index>(x.plane_size());
  for (int c = 0; c < x.c(); ++c) {
    const auto cc = static_cast<std::size_t>(c);
    const double scale = gamma[cc] / std::sqrt(static_cast<double>(running_var[cc]) + opt.eps);
    const double shift = beta[cc] - scale * running_mean[cc];
    for (int n = 0; n < x.n(); ++n) {
      Eigen::Map<const typename Tensor<Scalar>::Array> src(x.plane(n, c), hw);
      Eigen::Map<typename Tensor<Scalar>::Array> dst(out.plane(n, c), hw);
      dst = src * static_cast<Scalar>(scale) + static_cast<Scalar>(shift);
    }
  }
  return out;
}

template <typename Scalar>
struct BatchNormGrads {
  Tensor<Scalar> x;
  Tensor<Scalar> gamma;
  Tensor<Scalar> beta;
};

template <typename Scalar>
BatchNormGrads<Scalar> batchnorm_backward(const Tensor<Scalar>& grad_out, const BatchNormSaved<Scalar>& saved,
                                          const Tensor<Scalar>& gamma) {
  detail::require(!saved.xhat.empty(), "batchnorm_backward: no training-mode forward was recorded");
  detail::require(grad_out.dims() == saved.xhat.dims(), "batchnorm_backward: grad dims mismatch");
  const int C = grad_out.c();
  const std::size_t hw = grad_out.plane_size();
  const double m = static_cast<double>(grad_out.n()) * static_cast<double>(hw);
  BatchNormGrads<Scalar> g{Tensor<Scalar>(grad_out.dims()), Tensor<Scalar>(Dims{C}), Tensor<Scalar>(Dims{C})};
  parallel_for(C, static_cast<std::int64_t>(grad_out.size()) * 4, [&](std::int64_t ci) {
    const int c = static_cast<int>(ci);
    double sum_g = 0, sum_gx = 0;
    for (int n = 0; n < grad_out.n(); ++n) {
      const Scalar* gp = grad_out.plane(n, c);
      const Scalar* hp = saved.xhat.plane(n, c);
      for (std::size_t k = 0; k < hw; ++k) {
        sum_g += gp[k];
        sum_gx += static_cast<double>(gp[k]) * hp[k];
      }
    }
    g.beta[static_cast<std::size_t>(c)] = static_cast<Scalar>(sum_g);
    g.gamma[static_cast<std::size_t>(c)] = static_cast<Scalar>(sum_gx);
    const double k0 = gamma[static_cast<std::size_t>(c)] * saved.inv_std[static_cast<std::size_t>(c)] / m;
    for (int n = 0; n < grad_out.n(); ++n) {
      const Scalar* gp = grad_out.plane(n, c);
      const Scalar* hp = saved.xhat.plane(n, c);
      Scalar* xp = g.x.plane(n, c);
      for (std::size_t k = 0; k < hw; ++k) xp[k] = static_cast<Scalar>(k0 * (m * gp[k] - sum_g - hp[k] * sum_gx));
    }
  });
  return g;
}

// ---------------------------------------------------------------------------
// Activations

template <typename Scalar>
Tensor<Scalar> relu_forward(const Tensor<Scalar>& x) {
  return Tensor<Scalar>(x.dims(), x.array().max(Scalar(0)));
}

/// Subgradient at exactly 0 is 0.
template <typename Scalar>
Tensor<Scalar> relu_backward(const Tensor<Scalar>& grad_out, const Tensor<Scalar>& x) {
  detail::require(grad_out.dims() == x.dims(), "relu_backward: dims mismatch");
  return Tensor<Scalar>(x.dims(), (x.array() > Scalar(0)).select(grad_out.array(), Scalar(0)));
}

/// Per-channel slopes; x is rank 4 [N,C,H,W] or rank 2 [N,C].
template <typename Scalar>
Tensor<Scalar> prelu_forward(const Tensor<Scalar>& x, const Tensor<Scalar>& slope) {
  detail::require((x.rank() == 4 || x.rank() == 2) && slope.size() == static_cast<std::size_t>(x.dim(1)),
                  "prelu: " + std::to_string(slope.size()) + " slopes for input " + x.dims().str());
  Tensor<Scalar> out(x.dims());
  const std::size_t hw = x.rank() == 4 ? x.plane_size() : 1;
  const int C = x.dim(1);
  for (int n = 0; n < x.dim(0); ++n)
    for (int c = 0; c < C; ++c) {
      const Scalar a = slope[static_cast<std::size_t>(c)];
      const std::size_t base = (static_cast<std::size_t>(n) * C + c) * hw;
      for (std::size_t k = 0; k < hw; ++k) {
        const Scalar v = x[base + k];
        out[base + k] = v > Scalar(0) ? v : a * v;
      }
    }
  return out;
}

template <typename Scalar>
struct PReluGrads {
  Tensor<Scalar> x;
  Tensor<Scalar> slope;
};

/// grad_x = g (x>0), a*g (x<0), 0 at x==0; grad_a[c] = sum over x<=0 of g*x.
template <typename Scalar>
PReluGrads<Scalar> prelu_backward(const Tensor<Scalar>& grad_out, const Tensor<Scalar>& x, const Tensor<Scalar>& slope) {
  detail::require(grad_out.dims() == x.dims() && slope.size() == static_cast<std::size_t>(x.dim(1)),
                  "prelu_backward: dims mismatch");
  PReluGrads<Scalar> g{Tensor<Scalar>(x.dims()), Tensor<Scalar>(slope.dims())};
  const std::size_t hw = x.rank() == 4 ? x.plane_size() : 1;
  const int C = x.dim(1);
  for (int c = 0; c < C; ++c) {
    const Scalar a = slope[static_cast<std::size_t>(c)];
    Scalar acc = 0;
    for (int n = 0; n < x.dim(0); ++n) {
      const std::size_t base = (static_cast<std::size_t>(n) * C + c) * hw;
      for (std::size_t k = 0; k < hw; ++k) {
        const Scalar v = x[base + k], go = grad_out[base + k];
        if (v > Scalar(0)) {
          g.x[base + k] = go;
        } else {
          g.x[base + k] = v < Scalar(0) ? a * go : Scalar(0);
          acc += go * v;
        }
      }
    }
    g.slope[static_cast<std::size_t>(c)] = acc;
  }
  return g;
}

template <typename Scalar>
Scalar sigmoid(Scalar v) {
  if (v >= Scalar(0)) return Scalar(1) / (Scalar(1) + std::exp(-v));
  const Scalar e = std::exp(v);
  return e / (Scalar(1) + e);
}

template <typename Scalar>
Tensor<Scalar> sigmoid_forward(const Tensor<Scalar>& x) {
  return Tensor<Scalar>(x.dims(), x.array().unaryExpr([](Scalar v) { return sigmoid(v); }));
}

/// Uses the forward output y: grad = g * y * (1 - y).
template <typename Scalar>
Tensor<Scalar> sigmoid_backward(const Tensor<Scalar>& grad_out, const Tensor<Scalar>& y) {
  detail::require(grad_out.dims() == y.dims(), "sigmoid_backward: dims mismatch");
  return Tensor<Scalar>(y.dims(), grad_out.array() * y.array() * (Scalar(1) - y.array()));
}

// ---------------------------------------------------------------------------
// Pooling, affine, resampling

template <typename Scalar>
Tensor<Scalar> global_avg_pool_forward(const Tensor<Scalar>& x) {
  detail::require(x.rank() == 4, "global_avg_pool: rank-4 input required");
  Tensor<Scalar> out(Dims{x.n(), x.c()});
  const std::size_t hw = x.plane_size();
  for (int n = 0; n < x.n(); ++n)
    for (int c = 0; c < x.c(); ++c) {
      const Scalar* p = x.plane(n, c);
      double acc = 0;
      for (std::size_t k = 0; k < hw; ++k) acc += p[k];
      out[static_cast<std::size_t>(n) * x.c() + c] = static_cast<Scalar>(acc / static_cast<double>(hw));
    }
  return out;
}

template <typename Scalar>
Tensor<Scalar> global_avg_pool_backward(const Tensor<Scalar>& grad_out, const Dims& input_dims) {
  detail::require(grad_out.dims() == Dims{input_dims[0], input_dims[1]}, "global_avg_pool_backward: dims mismatch");
  Tensor<Scalar> gx(input_dims);
  const std::size_t hw = gx.plane_size();
  for (int n = 0; n < gx.n(); ++n)
    for (int c = 0; c < gx.c(); ++c)
      std::fill_n(gx.plane(n, c), hw, grad_out[static_cast<std::size_t>(n) * gx.c() + c] / static_cast<Scalar>(hw));
  return gx;
}

/// out = x * W^T + b with x [N,Cin], W [Cout,Cin], b [Cout].
template <typename Scalar>
Tensor<Scalar> affine_forward(const Tensor<Scalar>& x, const Tensor<Scalar>& w, const Tensor<Scalar>& b) {
  detail::require(x.rank() == 2 && w.rank() == 2 && w.dim(1) == x.dim(1) && b.dims() == Dims{w.dim(0)},
                  "affine: x " + x.dims().str() + ", W " + w.dims().str() + ", b " + b.dims().str());
  const int N = x.dim(0), cin = x.dim(1), cout = w.dim(0);
  Tensor<Scalar> out(Dims{N, cout});
  Eigen::Map<const RowMajorMatrix<Scalar>> xm(x.data(), N, cin), wm(w.data(), cout, cin);
  Eigen::Map<RowMajorMatrix<Scalar>> om(out.data(), N, cout);
  om.noalias() = xm * wm.transpose();
  om.rowwise() += Eigen::Map<const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>>(b.data(), cout);
  return out;
}

template <typename Scalar>
struct AffineGrads {
  Tensor<Scalar> x;
  Tensor<Scalar> w;
  Tensor<Scalar> b;
};

template <typename Scalar>
AffineGrads<Scalar> affine_backward(const Tensor<Scalar>& grad_out, const Tensor<Scalar>& x, const Tensor<Scalar>& w) {
  const int N = x.dim(0), cin = x.dim(1), cout = w.dim(0);
  detail::require(grad_out.dims() == Dims{N, cout}, "affine_backward: grad dims " + grad_out.dims().str());
  AffineGrads<Scalar> g{Tensor<Scalar>(x.dims()), Tensor<Scalar>(w.dims()), Tensor<Scalar>(Dims{cout})};
  Eigen::Map<const RowMajorMatrix<Scalar>> xm(x.data(), N, cin), wm(w.data(), cout, cin), gm(grad_out.data(), N, cout);
  Eigen::Map<RowMajorMatrix<Scalar>>(g.x.data(), N, cin).noalias() = gm * wm;
  Eigen::Map<RowMajorMatrix<Scalar>>(g.w.data(), cout, cin).noalias() = gm.transpose() * xm;
  Eigen::Map<Eigen::Matrix<Scalar, 1, Eigen::Dynamic>>(g.b.data(), cout) = gm.colwise().sum();
  return g;
}

/// 3x3 window, stride 2, padding 1, fixed divisor 9 (padded zeros count).
template <typename Scalar>
Tensor<Scalar> avg_pool3x3s2_forward(const Tensor<Scalar>& x) {
  detail::require(x.rank() == 4, "avg_pool3x3s2: rank-4 input required");
  const int H = x.h(), W = x.w(), Ho = (H + 1) / 2, Wo = (W + 1) / 2;
  Tensor<Scalar> out(Dims{x.n(), x.c(), Ho, Wo});
  for (int n = 0; n < x.n(); ++n)
    for (int c = 0; c < x.c(); ++c) {
      const Scalar* xp = x.plane(n, c);
      Scalar* op = out.plane(n, c);
      for (int i = 0; i < Ho; ++i)
        for (int j = 0; j < Wo; ++j) {
          Scalar acc = 0;
          for (int u = 0; u < 3; ++u) {
            const int ih = 2 * i - 1 + u;
            if (ih < 0 || ih >= H) continue;
            for (int v = 0; v < 3; ++v) {
              const int iw = 2 * j - 1 + v;
              if (iw >= 0 && iw < W) acc += xp[static_cast<std::size_t>(ih) * W + iw];
            }
          }
          op[static_cast<std::size_t>(i) * Wo + j] = acc / Scalar(9);
        }
    }
  return out;
}

template <typename Scalar>
Tensor<Scalar> avg_pool3x3s2_backward(const Tensor<Scalar>& grad_out, const Dims& input_dims) {
  Tensor<Scalar> gx(input_dims);
  const int H = gx.h(), W = gx.w(), Ho = (H + 1) / 2, Wo = (W + 1) / 2;
  detail::require(grad_out.dims() == Dims{gx.n(), gx.c(), Ho, Wo}, "avg_pool3x3s2_backward: dims mismatch");
  for (int n = 0; n < gx.n(); ++n)
    for (int c = 0; c < gx.c(); ++c) {
      const Scalar* gp = grad_out.plane(n, c);
      Scalar* xp = gx.plane(n, c);
      for (int i = 0; i < Ho; ++i)
        for (int j = 0; j < Wo; ++j) {
          const Scalar v9 = gp[static_cast<std::size_t>(i) * Wo + j] / Scalar(9);
          for (int u = 0; u < 3; ++u) {
            const int ih = 2 * i - 1 + u;
            if (ih < 0 || ih >= H) continue;
            for (int v = 0; v < 3; ++v) {
              const int iw = 2 * j - 1 + v;
              if (iw >= 0 && iw < W) xp[static_cast<std::size_t>(ih) * W + iw] += v9;
            }
          }
        }
    }
  return gx;
}

/// Source taps for one output coordinate of a half-pixel-centred bilinear resize.
struct BilinearTap {
  int lo = 0;
  int hi = 0;
  double frac = 0;  // weight of `hi`
};

/// Output index i samples the input at (i + 0.5) * in / out - 0.5, clamped to [0, in-1].
std::vector<BilinearTap> bilinear_taps(int in, int out);

template <typename Scalar>
void bilinear_resize_plane(const Scalar* src, int h, int w, Scalar* dst, int oh, int ow,
                           const std::vector<BilinearTap>& rows, const std::vector<BilinearTap>& cols) {
  for (int i = 0; i < oh; ++i) {
    const BilinearTap& r = rows[static_cast<std::size_t>(i)];
    const Scalar* r0 = src + static_cast<std::size_t>(r.lo) * w;
    const Scalar* r1 = src + static_cast<std::size_t>(r.hi) * w;
    const auto fy = static_cast<Scalar>(r.frac);
    for (int j = 0; j < ow; ++j) {
      const BilinearTap& c = cols[static_cast<std::size_t>(j)];
      const auto fx = static_cast<Scalar>(c.frac);
      const Scalar top = (Scalar(1) - fx) * r0[c.lo] + fx * r0[c.hi];
      const Scalar bot = (Scalar(1) - fx) * r1[c.lo] + fx * r1[c.hi];
      dst[static_cast<std::size_t>(i) * ow + j] = (Scalar(1) - fy) * top + fy * bot;
    }
  }
  (void)h;
}

template <typename Scalar>
Tensor<Scalar> bilinear_upsample_forward(const Tensor<Scalar>& x, int factor) {
  detail::require(factor >= 1, "bilinear_upsample: factor must be >= 1, got " + std::to_string(factor));
  detail::require(x.rank() == 4, "bilinear_upsample: rank-4 input required");
  const int oh = x.h() * factor, ow = x.w() * factor;
  Tensor<Scalar> out(Dims{x.n(), x.c(), oh, ow});
  const auto rows = bilinear_taps(x.h(), oh), cols = bilinear_taps(x.w(), ow);
  parallel_for(static_cast<std::int64_t>(x.n()) * x.c(), static_cast<std::int64_t>(out.size()) * 8, [&](std::int64_t idx) {
    const int n = static_cast<int>(idx / x.c()), c = static_cast<int>(idx % x.c());
    bilinear_resize_plane(x.plane(n, c), x.h(), x.w(), out.plane(n, c), oh, ow, rows, cols);
  });
  return out;
}

/// Transpose of bilinear_upsample_forward.
template <typename Scalar>
Tensor<Scalar> bilinear_upsample_backward(const Tensor<Scalar>& grad_out, const Dims& input_dims, int factor) {
  detail::require(factor >= 1, "bilinear_upsample_backward: factor must be >= 1");
  Tensor<Scalar> gx(input_dims);
  const int h = gx.h(), w = gx.w(), oh = h * factor, ow = w * factor;
  detail::require(grad_out.dims() == Dims{gx.n(), gx.c(), oh, ow}, "bilinear_upsample_backward: dims mismatch");
  const auto rows = bilinear_taps(h, oh), cols = bilinear_taps(w, ow);
  parallel_for(static_cast<std::int64_t>(gx.n()) * gx.c(), static_cast<std::int64_t>(grad_out.size()) * 8, [&](std::int64_t idx) {
    const int n = static_cast<int>(idx / gx.c()), c = static_cast<int>(idx % gx.c());
    const Scalar* gp = grad_out.plane(n, c);
    Scalar* xp = gx.plane(n, c);
    for (int i = 0; i < oh; ++i) {
      const BilinearTap& r = rows[static_cast<std::size_t>(i)];
      const auto fy = static_cast<Scalar>(r.frac);
      Scalar* r0 = xp + static_cast<std::size_t>(r.lo) * w;
      Scalar* r1 = xp + static_cast<std::size_t>(r.hi) * w;
      for (int j = 0; j < ow; ++j) {
        const BilinearTap& cl = cols[static_cast<std::size_t>(j)];
        const auto fx = static_cast<Scalar>(cl.frac);
        const Scalar g = gp[static_cast<std::size_t>(i) * ow + j];
        r0[cl.lo] += (Scalar(1) - fy) * (Scalar(1) - fx) * g;
        r0[cl.hi] += (Scalar(1) - fy) * fx * g;
        r1[cl.lo] += fy * (Scalar(1) - fx) * g;
        r1[cl.hi] += fy * fx * g;
      }
    }
  });
  return gx;
}

// ---------------------------------------------------------------------------
// Loss

enum class LossReduction { kMean, kSum };

template <typename Scalar>
struct LossResult {
  double loss = 0;
  Tensor<Scalar> grad;
  std::size_t valid_pixels = 0;
};

/// Per-pixel softmax cross-entropy, skipping pixels labelled ignore_index.
template <typename Scalar>
LossResult<Scalar> softmax_ce_masked(const Tensor<Scalar>& scores, const Labels& labels, std::int32_t ignore_index = kIgnoreLabel,
                                     LossReduction reduction = LossReduction::kMean) {
  detail::require(scores.rank() == 4, "softmax_ce_masked: scores must be [N,K,H,W]");
  detail::require(labels.n == scores.n() && labels.h == scores.h() && labels.w == scores.w(),
                  "softmax_ce_masked: labels do not match scores " + scores.dims().str());
  const int K = scores.c();
  const std::size_t hw = scores.plane_size();
  LossResult<Scalar> r;
  r.grad = Tensor<Scalar>(scores.dims());
  std::vector<double> prob(static_cast<std::size_t>(K));
  for (int n = 0; n < scores.n(); ++n) {
    for (std::size_t k = 0; k < hw; ++k) {
      const std::int32_t label = labels.v[static_cast<std::size_t>(n) * hw + k];
      if (label == ignore_index) continue;
      if (label < 0 || label >= K)
        throw std::invalid_argument("softmax_ce_masked: label " + std::to_string(label) + " outside [0," +
                                    std::to_string(K) + ")");
      double mx = -std::numeric_limits<double>::infinity();
      for (int c = 0; c < K; ++c) mx = std::max(mx, static_cast<double>(scores.plane(n, c)[k]));
      double z = 0;
      for (int c = 0; c < K; ++c) {
        prob[static_cast<std::size_t>(c)] = std::exp(static_cast<double>(scores.plane(n, c)[k]) - mx);
        z += prob[static_cast<std::size_t>(c)];
      }
      r.loss += std::log(z) - (static_cast<double>(scores.plane(n, label)[k]) - mx);
      for (int c = 0; c < K; ++c)
        r.grad.plane(n, c)[k] = static_cast<Scalar>(prob[static_cast<std::size_t>(c)] / z - (c == label ? 1.0 : 0.0));
      ++r.valid_pixels;
    }
  }
  if (r.valid_pixels == 0) throw AllIgnoredError();
  if (reduction == LossReduction::kMean) {
    const double inv = 1.0 / static_cast<double>(r.valid_pixels);
    r.loss *= inv;
    r.grad.array() *= static_cast<Scalar>(inv);
  }
  return r;
}

}  // namespace cgnet
