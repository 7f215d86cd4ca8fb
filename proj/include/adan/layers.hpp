#pragma once

// Layer primitives with hand-derived backward passes. All functions are pure;
// the float instantiations run through the dispatched SIMD kernels, the
// double instantiations through the scalar reference.

#include <optional>
#include <string>
#include <vector>

#include "adan/error.hpp"
#include "adan/simd/ops.hpp"
#include "adan/tensor.hpp"

namespace adan {

template <class Real>
struct LayerGradients {
  BasicTensor<Real> d_input;
  std::optional<BasicTensor<Real>> d_weights;
  std::optional<BasicTensor<Real>> d_bias;
};

namespace detail {

inline void require_rank(const Shape& s, std::size_t rank, const char* op, const char* what) {
  if (s.size() != rank) {
    throw DimensionError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) + ", got " +
                         shape_string(s));
  }
}

inline void require_axis(bool ok, const char* op, const std::string& msg) {
  if (!ok) throw DimensionError(std::string(op) + ": " + msg);
}

struct ConvGeometry {
  std::size_t batch, in_ch, h, w, out_ch, kh, kw, stride, oh, ow;
  std::size_t patch() const { return in_ch * kh * kw; }
  std::size_t plane() const { return oh * ow; }
};

template <class Real>
ConvGeometry conv_geometry(const BasicTensor<Real>& input, const BasicTensor<Real>& weights, std::size_t stride) {
  require_rank(input.shape(), 4, "conv2d", "input");
  require_rank(weights.shape(), 4, "conv2d", "weights");
  require_axis(stride >= 1, "conv2d", "stride must be positive");
  const auto& is = input.shape();
  const auto& ws = weights.shape();
  require_axis(is[1] == ws[1], "conv2d",
               "input channel axis (1) is " + std::to_string(is[1]) + " but weights channel axis (1) is " +
                   std::to_string(ws[1]));
  require_axis(is[2] >= ws[2], "conv2d",
               "input height axis (2) " + std::to_string(is[2]) + " smaller than kernel height " +
                   std::to_string(ws[2]));
  require_axis(is[3] >= ws[3], "conv2d",
               "input width axis (3) " + std::to_string(is[3]) + " smaller than kernel width " +
                   std::to_string(ws[3]));
  ConvGeometry g{is[0], is[1], is[2], is[3], ws[0], ws[2], ws[3], stride, 0, 0};
  g.oh = (g.h - g.kh) / stride + 1;
  g.ow = (g.w - g.kw) / stride + 1;
  return g;
}

// Unfolds one image [C,H,W] into columns [C*Kh*Kw, Oh*Ow].
template <class Real>
void im2col(const Real* image, const ConvGeometry& g, Real* col) {
  const std::size_t plane = g.plane();
  for (std::size_t c = 0; c < g.in_ch; ++c) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        Real* dst = col + ((c * g.kh + ki) * g.kw + kj) * plane;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const Real* src = image + (c * g.h + oy * g.stride + ki) * g.w + kj;
          for (std::size_t ox = 0; ox < g.ow; ++ox) dst[oy * g.ow + ox] = src[ox * g.stride];
        }
      }
    }
  }
}

template <class Real>
void col2im_add(const Real* col, const ConvGeometry& g, Real* image) {
  const std::size_t plane = g.plane();
  for (std::size_t c = 0; c < g.in_ch; ++c) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const Real* src = col + ((c * g.kh + ki) * g.kw + kj) * plane;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          Real* dst = image + (c * g.h + oy * g.stride + ki) * g.w + kj;
          for (std::size_t ox = 0; ox < g.ow; ++ox) dst[ox * g.stride] += src[oy * g.ow + ox];
        }
      }
    }
  }
}

}  // namespace detail

/// Cross-correlation without padding: out[b,o,y,x] = bias[o] +
/// sum_{c,i,j} w[o,c,i,j] * in[b,c,y*stride+i,x*stride+j].
template <class Real>
BasicTensor<Real> conv2d(const BasicTensor<Real>& input, const BasicTensor<Real>& weights,
                         const BasicTensor<Real>& bias, std::size_t stride = 1) {
  const auto g = detail::conv_geometry(input, weights, stride);
  detail::require_axis(bias.size() == g.out_ch, "conv2d",
                       "bias length " + std::to_string(bias.size()) + " does not match output channels (axis 0) " +
                           std::to_string(g.out_ch));
  BasicTensor<Real> out({g.batch, g.out_ch, g.oh, g.ow});
  std::vector<Real> col(g.patch() * g.plane());
  const std::size_t in_stride = g.in_ch * g.h * g.w;
  const std::size_t out_stride = g.out_ch * g.plane();
  for (std::size_t b = 0; b < g.batch; ++b) {
    detail::im2col(input.data() + b * in_stride, g, col.data());
    Real* ob = out.data() + b * out_stride;
    simd::gemm_nn(g.out_ch, g.plane(), g.patch(), weights.data(), col.data(), ob, false);
    for (std::size_t o = 0; o < g.out_ch; ++o)
      for (std::size_t p = 0; p < g.plane(); ++p) ob[o * g.plane() + p] += bias[o];
  }
  return out;
}

template <class Real>
LayerGradients<Real> conv2d_backward(const BasicTensor<Real>& input, const BasicTensor<Real>& weights,
                                     std::size_t stride, const BasicTensor<Real>& d_output) {
  const auto g = detail::conv_geometry(input, weights, stride);
  detail::require_axis(d_output.shape() == Shape{g.batch, g.out_ch, g.oh, g.ow}, "conv2d_backward",
                       "output gradient shape " + shape_string(d_output.shape()) + " does not match forward output");
  LayerGradients<Real> grads{BasicTensor<Real>(input.shape()), BasicTensor<Real>(weights.shape()),
                             BasicTensor<Real>(Shape{g.out_ch})};
  std::vector<Real> col(g.patch() * g.plane());
  std::vector<Real> d_col(g.patch() * g.plane());
  const std::size_t in_stride = g.in_ch * g.h * g.w;
  const std::size_t out_stride = g.out_ch * g.plane();
  for (std::size_t b = 0; b < g.batch; ++b) {
    const Real* db = d_output.data() + b * out_stride;
    detail::im2col(input.data() + b * in_stride, g, col.data());
    simd::gemm_nt(g.out_ch, g.patch(), g.plane(), db, col.data(), grads.d_weights->data(), true);
    for (std::size_t o = 0; o < g.out_ch; ++o) {
      Real s = 0;
      for (std::size_t p = 0; p < g.plane(); ++p) s += db[o * g.plane() + p];
      (*grads.d_bias)[o] += s;
    }
    simd::gemm_tn(g.patch(), g.plane(), g.out_ch, weights.data(), db, d_col.data(), false);
    detail::col2im_add(d_col.data(), g, grads.d_input.data() + b * in_stride);
  }
  return grads;
}

/// 2x2 max pooling with stride 2.
template <class Real>
BasicTensor<Real> maxpool2(const BasicTensor<Real>& input) {
  detail::require_rank(input.shape(), 4, "maxpool2", "input");
  const auto& s = input.shape();
  detail::require_axis(s[2] % 2 == 0, "maxpool2", "height axis (2) must be even, got " + std::to_string(s[2]));
  detail::require_axis(s[3] % 2 == 0, "maxpool2", "width axis (3) must be even, got " + std::to_string(s[3]));
  const std::size_t planes = s[0] * s[1], h = s[2], w = s[3], oh = h / 2, ow = w / 2;
  BasicTensor<Real> out({s[0], s[1], oh, ow});
  for (std::size_t pl = 0; pl < planes; ++pl) {
    const Real* src = input.data() + pl * h * w;
    Real* dst = out.data() + pl * oh * ow;
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t x = 0; x < ow; ++x) {
        const Real* win = src + 2 * y * w + 2 * x;
        Real m = win[0];
        if (win[1] > m) m = win[1];
        if (win[w] > m) m = win[w];
        if (win[w + 1] > m) m = win[w + 1];
        dst[y * ow + x] = m;
      }
    }
  }
  return out;
}

/// Routes each output gradient to the first maximal element of its window in
/// scan order.
template <class Real>
BasicTensor<Real> maxpool2_backward(const BasicTensor<Real>& input, const BasicTensor<Real>& d_output) {
  detail::require_rank(input.shape(), 4, "maxpool2_backward", "input");
  const auto& s = input.shape();
  const std::size_t planes = s[0] * s[1], h = s[2], w = s[3], oh = h / 2, ow = w / 2;
  detail::require_axis(d_output.shape() == Shape{s[0], s[1], oh, ow}, "maxpool2_backward",
                       "output gradient shape " + shape_string(d_output.shape()) + " does not match forward output");
  BasicTensor<Real> d_input(s);
  for (std::size_t pl = 0; pl < planes; ++pl) {
    const Real* src = input.data() + pl * h * w;
    Real* dst = d_input.data() + pl * h * w;
    const Real* g = d_output.data() + pl * oh * ow;
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t x = 0; x < ow; ++x) {
        const std::size_t base = 2 * y * w + 2 * x;
        const std::size_t offsets[4] = {0, 1, w, w + 1};
        std::size_t best = base;
        for (std::size_t o : offsets)
          if (src[base + o] > src[best]) best = base + o;
        dst[best] += g[y * ow + x];
      }
    }
  }
  return d_input;
}

/// out[b,m] = bias[m] + sum_n weights[m,n] * input[b,n].
template <class Real>
BasicTensor<Real> linear(const BasicTensor<Real>& input, const BasicTensor<Real>& weights,
                         const BasicTensor<Real>& bias) {
  detail::require_rank(input.shape(), 2, "linear", "input");
  detail::require_rank(weights.shape(), 2, "linear", "weights");
  const std::size_t batch = input.dim(0), n = input.dim(1), m = weights.dim(0);
  detail::require_axis(weights.dim(1) == n, "linear",
                       "input feature axis (1) is " + std::to_string(n) + " but weights input axis (1) is " +
                           std::to_string(weights.dim(1)));
  detail::require_axis(bias.size() == m, "linear",
                       "bias length " + std::to_string(bias.size()) + " does not match weights output axis (0) " +
                           std::to_string(m));
  BasicTensor<Real> out({batch, m});
  simd::gemm_nt(batch, m, n, input.data(), weights.data(), out.data(), false);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t j = 0; j < m; ++j) out[b * m + j] += bias[j];
  return out;
}

template <class Real>
LayerGradients<Real> linear_backward(const BasicTensor<Real>& input, const BasicTensor<Real>& weights,
                                     const BasicTensor<Real>& d_output) {
  detail::require_rank(input.shape(), 2, "linear_backward", "input");
  const std::size_t batch = input.dim(0), n = input.dim(1), m = weights.dim(0);
  detail::require_axis(d_output.shape() == Shape{batch, m}, "linear_backward",
                       "output gradient shape " + shape_string(d_output.shape()) + " does not match forward output");
  LayerGradients<Real> grads{BasicTensor<Real>(input.shape()), BasicTensor<Real>(weights.shape()),
                             BasicTensor<Real>(Shape{m})};
  simd::gemm_nn(batch, n, m, d_output.data(), weights.data(), grads.d_input.data(), false);
  simd::gemm_tn(m, n, batch, d_output.data(), input.data(), grads.d_weights->data(), false);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t j = 0; j < m; ++j) (*grads.d_bias)[j] += d_output[b * m + j];
  return grads;
}

template <class Real>
BasicTensor<Real> relu(const BasicTensor<Real>& input) {
  BasicTensor<Real> out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] > Real(0) ? input[i] : Real(0);
  return out;
}

/// Subgradient 0 at exactly 0.
template <class Real>
BasicTensor<Real> relu_backward(const BasicTensor<Real>& input, const BasicTensor<Real>& d_output) {
  detail::require_axis(input.shape() == d_output.shape(), "relu_backward",
                       "gradient shape " + shape_string(d_output.shape()) + " does not match input " +
                           shape_string(input.shape()));
  BasicTensor<Real> d_input(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) d_input[i] = input[i] > Real(0) ? d_output[i] : Real(0);
  return d_input;
}

/// Zero border of width `amount` on both spatial axes.
template <class Real>
BasicTensor<Real> pad_spatial(const BasicTensor<Real>& input, std::size_t amount) {
  detail::require_rank(input.shape(), 4, "pad_spatial", "input");
  if (amount == 0) return input;
  const auto& s = input.shape();
  const std::size_t h = s[2], w = s[3], ph = h + 2 * amount, pw = w + 2 * amount;
  BasicTensor<Real> out({s[0], s[1], ph, pw});
  for (std::size_t pl = 0; pl < s[0] * s[1]; ++pl)
    for (std::size_t y = 0; y < h; ++y)
      std::copy_n(input.data() + (pl * h + y) * w, w, out.data() + (pl * ph + y + amount) * pw + amount);
  return out;
}

template <class Real>
BasicTensor<Real> pad_spatial_backward(const BasicTensor<Real>& d_output, std::size_t amount) {
  detail::require_rank(d_output.shape(), 4, "pad_spatial_backward", "gradient");
  if (amount == 0) return d_output;
  const auto& s = d_output.shape();
  detail::require_axis(s[2] > 2 * amount && s[3] > 2 * amount, "pad_spatial_backward",
                       "gradient spatial axes smaller than the border");
  const std::size_t ph = s[2], pw = s[3], h = ph - 2 * amount, w = pw - 2 * amount;
  BasicTensor<Real> out({s[0], s[1], h, w});
  for (std::size_t pl = 0; pl < s[0] * s[1]; ++pl)
    for (std::size_t y = 0; y < h; ++y)
      std::copy_n(d_output.data() + (pl * ph + y + amount) * pw + amount, w, out.data() + (pl * h + y) * w);
  return out;
}

}  // namespace adan
