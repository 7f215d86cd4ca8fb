#pragma once

// Straightforward re-implementations used as test oracles. None of these
// share code with the library beyond the tensor container.

#include <cmath>
#include <random>
#include <vector>

#include "adan/tensor.hpp"

namespace oracle {

using adan::Tensor64;

inline Tensor64 randn(const adan::Shape& shape, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  Tensor64 t(shape);
  for (auto& v : t.storage()) v = normal(rng);
  return t;
}

inline adan::Tensor randn_f(const adan::Shape& shape, std::mt19937_64& rng, float scale = 1.0f) {
  std::normal_distribution<float> normal(0.0f, scale);
  adan::Tensor t(shape);
  for (auto& v : t.storage()) v = normal(rng);
  return t;
}

// out[b,o,y,x] = bias[o] + sum w[o,c,i,j] in[b,c,y*s+i,x*s+j]
template <class T>
adan::BasicTensor<T> conv2d(const adan::BasicTensor<T>& in, const adan::BasicTensor<T>& w,
                            const adan::BasicTensor<T>& b, std::size_t s) {
  const std::size_t B = in.dim(0), C = in.dim(1), H = in.dim(2), W = in.dim(3);
  const std::size_t O = w.dim(0), K = w.dim(2);
  const std::size_t OH = (H - K) / s + 1, OW = (W - K) / s + 1;
  adan::BasicTensor<T> out({B, O, OH, OW});
  for (std::size_t n = 0; n < B; ++n)
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t y = 0; y < OH; ++y)
        for (std::size_t x = 0; x < OW; ++x) {
          double acc = b[o];
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t i = 0; i < K; ++i)
              for (std::size_t j = 0; j < K; ++j)
                acc += double(w.at(o, c, i, j)) * double(in.at(n, c, y * s + i, x * s + j));
          out.at(n, o, y, x) = static_cast<T>(acc);
        }
  return out;
}

template <class T>
adan::BasicTensor<T> maxpool2(const adan::BasicTensor<T>& in) {
  const std::size_t B = in.dim(0), C = in.dim(1), H = in.dim(2) / 2, W = in.dim(3) / 2;
  adan::BasicTensor<T> out({B, C, H, W});
  for (std::size_t n = 0; n < B; ++n)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x)
          out.at(n, c, y, x) = std::max({in.at(n, c, 2 * y, 2 * x), in.at(n, c, 2 * y, 2 * x + 1),
                                         in.at(n, c, 2 * y + 1, 2 * x), in.at(n, c, 2 * y + 1, 2 * x + 1)});
  return out;
}

inline double gaussian_sum(const std::vector<double>& bandwidths, const double* a, const double* b, std::size_t d) {
  double d2 = 0.0;
  for (std::size_t k = 0; k < d; ++k) d2 += (a[k] - b[k]) * (a[k] - b[k]);
  double s = 0.0;
  for (double bw : bandwidths) s += std::exp(-d2 / (2.0 * bw));
  return s;
}

// Biased MMD^2 with every pair summed explicitly.
inline double mmd_biased(const std::vector<double>& bw, const Tensor64& xs, const Tensor64& xt) {
  const std::size_t ns = xs.dim(0), nt = xt.dim(0), d = xs.size() / ns;
  double ss = 0, st = 0, tt = 0;
  for (std::size_t i = 0; i < ns; ++i)
    for (std::size_t j = 0; j < ns; ++j) ss += gaussian_sum(bw, xs.data() + i * d, xs.data() + j * d, d);
  for (std::size_t i = 0; i < ns; ++i)
    for (std::size_t j = 0; j < nt; ++j) st += gaussian_sum(bw, xs.data() + i * d, xt.data() + j * d, d);
  for (std::size_t i = 0; i < nt; ++i)
    for (std::size_t j = 0; j < nt; ++j) tt += gaussian_sum(bw, xt.data() + i * d, xt.data() + j * d, d);
  return ss / double(ns * ns) - 2.0 * st / double(ns * nt) + tt / double(nt * nt);
}

// Same double sums with the i == j self-similarity terms left out of the
// within-domain blocks (the U-statistic the paired estimator targets).
inline double mmd_unbiased(const std::vector<double>& bw, const Tensor64& xs, const Tensor64& xt) {
  const std::size_t ns = xs.dim(0), nt = xt.dim(0), d = xs.size() / ns;
  double ss = 0, st = 0, tt = 0;
  for (std::size_t i = 0; i < ns; ++i)
    for (std::size_t j = 0; j < ns; ++j)
      if (i != j) ss += gaussian_sum(bw, xs.data() + i * d, xs.data() + j * d, d);
  for (std::size_t i = 0; i < ns; ++i)
    for (std::size_t j = 0; j < nt; ++j) st += gaussian_sum(bw, xs.data() + i * d, xt.data() + j * d, d);
  for (std::size_t i = 0; i < nt; ++i)
    for (std::size_t j = 0; j < nt; ++j)
      if (i != j) tt += gaussian_sum(bw, xt.data() + i * d, xt.data() + j * d, d);
  return ss / double(ns * (ns - 1)) - 2.0 * st / double(ns * nt) + tt / double(nt * (nt - 1));
}

}  // namespace oracle
