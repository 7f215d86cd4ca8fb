#pragma once

// Training and gating math: softmax, cross-entropy, the Gaussian kernel
// family, quadratic and linear-time (joint, multi-layer) MMD, per-exit and
// total losses, sample entropy.
//
// Scalar results are accumulated in double regardless of the tensor type.

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "adan/error.hpp"
#include "adan/simd/ops.hpp"
#include "adan/tensor.hpp"

namespace adan {

inline constexpr double kProbabilityFloor = 1e-12;

template <class Real>
BasicTensor<Real> softmax(const BasicTensor<Real>& logits) {
  if (logits.rank() != 2) throw DimensionError("softmax expects [B,C], got " + shape_string(logits.shape()));
  const std::size_t rows = logits.dim(0), cols = logits.dim(1);
  BasicTensor<Real> out(logits.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* z = logits.data() + r * cols;
    Real* p = out.data() + r * cols;
    const Real peak = *std::max_element(z, z + cols);
    double sum = 0.0;
    for (std::size_t c = 0; c < cols; ++c) sum += std::exp(static_cast<double>(z[c] - peak));
    for (std::size_t c = 0; c < cols; ++c) p[c] = static_cast<Real>(std::exp(static_cast<double>(z[c] - peak)) / sum);
  }
  return out;
}

namespace detail {

template <class Real>
void check_labels(const BasicTensor<Real>& probs, std::span<const int> labels, const char* op) {
  if (probs.rank() != 2) throw DimensionError(std::string(op) + " expects [B,C], got " + shape_string(probs.shape()));
  if (labels.size() > probs.dim(0)) {
    throw DimensionError(std::string(op) + ": " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(probs.dim(0)) + " rows");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= probs.dim(1)) {
      throw IndexError(std::string(op) + ": label " + std::to_string(labels[i]) + " at row " + std::to_string(i) +
                       " outside [0," + std::to_string(probs.dim(1)) + ")");
    }
  }
}

}  // namespace detail

/// Mean over the first labels.size() rows of -(1/|C|) ln p_true, p clamped
/// below at 1e-12.
template <class Real>
double cross_entropy(const BasicTensor<Real>& probs, std::span<const int> labels) {
  detail::check_labels(probs, labels, "cross_entropy");
  if (labels.empty()) throw ArgumentError("cross_entropy: no labels");
  const std::size_t cols = probs.dim(1);
  double sum = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double p = std::max(static_cast<double>(probs[i * cols + labels[i]]), kProbabilityFloor);
    sum += -std::log(p) / static_cast<double>(cols);
  }
  return sum / static_cast<double>(labels.size());
}

/// d cross_entropy(softmax(z)) / dz for the labeled rows; remaining rows get
/// zero gradient.
template <class Real>
BasicTensor<Real> cross_entropy_logit_gradient(const BasicTensor<Real>& probs, std::span<const int> labels) {
  detail::check_labels(probs, labels, "cross_entropy_logit_gradient");
  const std::size_t cols = probs.dim(1);
  const double scale = 1.0 / (static_cast<double>(cols) * static_cast<double>(labels.size()));
  BasicTensor<Real> grad(probs.shape());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    for (std::size_t c = 0; c < cols; ++c) {
      const double target = static_cast<int>(c) == labels[i] ? 1.0 : 0.0;
      grad[i * cols + c] = static_cast<Real>((probs[i * cols + c] - target) * scale);
    }
  }
  return grad;
}

/// -sum y ln y with 0 ln 0 = 0.
template <class Real>
double entropy(std::span<const Real> probs) {
  double sum = 0.0, h = 0.0;
  for (Real p : probs) {
    if (p < Real(0)) throw ArgumentError("entropy: negative probability " + std::to_string(p));
    sum += p;
    if (p > Real(0)) h -= static_cast<double>(p) * std::log(static_cast<double>(p));
  }
  if (std::abs(sum - 1.0) > 1e-5) throw ArgumentError("entropy: probabilities sum to " + std::to_string(sum));
  return h;
}

/// Unweighted sum of Gaussian kernels exp(-d^2 / (2 sigma_k^2)); the
/// bandwidths hold sigma_k^2.
struct KernelFamily {
  std::vector<double> bandwidths;

  void validate() const {
    if (bandwidths.empty()) throw ArgumentError("kernel family needs at least one bandwidth");
    for (double b : bandwidths)
      if (!(b > 0.0) || !std::isfinite(b)) throw ArgumentError("kernel bandwidths must be positive and finite");
  }

  double from_squared_distance(double d2) const {
    double s = 0.0;
    for (double b : bandwidths) s += std::exp(-d2 / (2.0 * b));
    return s;
  }

  /// d k / d(d^2).
  double derivative(double d2) const {
    double s = 0.0;
    for (double b : bandwidths) s -= std::exp(-d2 / (2.0 * b)) / (2.0 * b);
    return s;
  }
};

inline const std::vector<double>& default_bandwidth_multipliers() {
  static const std::vector<double> m{0.25, 0.5, 1.0, 2.0, 4.0};
  return m;
}

template <class Real>
double kernel_eval(const KernelFamily& fam, std::span<const Real> x, std::span<const Real> y) {
  if (x.size() != y.size()) throw DimensionError("kernel_eval: vector lengths differ");
  return fam.from_squared_distance(static_cast<double>(simd::squared_distance(x.data(), y.data(), x.size())));
}

/// Gradient of kernel_eval with respect to x (the gradient for y is its
/// negation).
template <class Real>
std::vector<double> kernel_gradient_x(const KernelFamily& fam, std::span<const Real> x, std::span<const Real> y) {
  const double d2 = static_cast<double>(simd::squared_distance(x.data(), y.data(), x.size()));
  const double dk = fam.derivative(d2);
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) g[i] = 2.0 * dk * (static_cast<double>(x[i]) - y[i]);
  return g;
}

namespace detail {

template <class Real>
std::size_t feature_count(const BasicTensor<Real>& t) {
  return t.dim(0) ? t.size() / t.dim(0) : 0;
}

template <class Real>
std::span<const Real> row_of(const BasicTensor<Real>& t, std::size_t i) {
  const std::size_t d = feature_count(t);
  return {t.data() + i * d, d};
}

}  // namespace detail

/// Exact median of pairwise squared distances over the rows of both sets,
/// times each multiplier. A degenerate (zero) median falls back to 1.
template <class Real>
KernelFamily median_heuristic_family(const BasicTensor<Real>& source, const BasicTensor<Real>& target,
                                     std::span<const double> multipliers) {
  const std::size_t ns = source.dim(0), nt = target.dim(0), n = ns + nt;
  const std::size_t d = detail::feature_count(source);
  if (detail::feature_count(target) != d) throw DimensionError("median heuristic: feature sizes differ");
  auto row = [&](std::size_t i) { return i < ns ? source.data() + i * d : target.data() + (i - ns) * d; };
  std::vector<double> dist;
  dist.reserve(n * (n - 1) / 2);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) dist.push_back(static_cast<double>(simd::squared_distance(row(i), row(j), d)));
  double base = 1.0;
  if (!dist.empty()) {
    const auto mid = dist.begin() + static_cast<std::ptrdiff_t>(dist.size() / 2);
    std::nth_element(dist.begin(), mid, dist.end());
    double med = *mid;
    if (dist.size() % 2 == 0) med = 0.5 * (med + *std::max_element(dist.begin(), mid));
    if (med > 1e-12 && std::isfinite(med)) base = med;
  }
  KernelFamily fam;
  for (double m : multipliers) fam.bandwidths.push_back(base * m);
  fam.validate();
  return fam;
}

/// Biased quadratic-time MMD^2 between the rows of xs and xt.
template <class Real>
double mmd_quadratic(const KernelFamily& fam, const BasicTensor<Real>& xs, const BasicTensor<Real>& xt) {
  fam.validate();
  if (xs.rank() == 0 || xt.rank() == 0 || xs.dim(0) == 0 || xt.dim(0) == 0) {
    throw ArgumentError("mmd_quadratic: both sets must be non-empty");
  }
  if (detail::feature_count(xs) != detail::feature_count(xt)) throw DimensionError("mmd_quadratic: feature sizes differ");
  const std::size_t ns = xs.dim(0), nt = xt.dim(0);
  auto block = [&](const BasicTensor<Real>& a, const BasicTensor<Real>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.dim(0); ++i)
      for (std::size_t j = 0; j < b.dim(0); ++j) s += kernel_eval(fam, detail::row_of(a, i), detail::row_of(b, j));
    return s;
  };
  const double dns = static_cast<double>(ns), dnt = static_cast<double>(nt);
  return block(xs, xs) / (dns * dns) - 2.0 * block(xs, xt) / (dns * dnt) + block(xt, xt) / (dnt * dnt);
}

template <class Real>
struct JmmdResult {
  double value = 0.0;
  std::vector<BasicTensor<Real>> d_source;  // one per layer, shaped like the inputs
  std::vector<BasicTensor<Real>> d_target;
};

/// Linear-time joint MMD over L layers: consecutive samples (2i, 2i+1) form
/// disjoint quadruples; each pair kernel is the product of per-layer kernel
/// families.
template <class Real>
JmmdResult<Real> jmmd_linear(std::span<const KernelFamily> families, std::span<const BasicTensor<Real>> source,
                             std::span<const BasicTensor<Real>> target, bool with_gradients = true) {
  const std::size_t layers = source.size();
  if (layers == 0 || target.size() != layers || families.size() != layers) {
    throw ArgumentError("jmmd_linear: need matching, non-empty layer lists and kernel families");
  }
  for (const auto& f : families) f.validate();
  const std::size_t n = source[0].dim(0);
  if (n == 0 || n % 2 != 0) throw ArgumentError("jmmd_linear: batch size must be even and positive");
  for (std::size_t l = 0; l < layers; ++l) {
    if (source[l].dim(0) != n || target[l].dim(0) != n) {
      throw ArgumentError("jmmd_linear: all layers must share batch size " + std::to_string(n));
    }
    if (detail::feature_count(source[l]) != detail::feature_count(target[l])) {
      throw DimensionError("jmmd_linear: layer " + std::to_string(l) + " feature sizes differ");
    }
  }

  JmmdResult<Real> out;
  if (with_gradients) {
    for (std::size_t l = 0; l < layers; ++l) {
      out.d_source.emplace_back(source[l].shape());
      out.d_target.emplace_back(target[l].shape());
    }
  }
  const double scale = 2.0 / static_cast<double>(n);
  std::vector<double> d2(layers), k(layers);

  // One signed pair term: sign * prod_l k^l(x^l, y^l), with gradients into
  // the rows the pair was drawn from.
  auto pair_term = [&](const std::span<const BasicTensor<Real>> xs, std::size_t xi, std::vector<BasicTensor<Real>>* gx,
                       const std::span<const BasicTensor<Real>> ys, std::size_t yi, std::vector<BasicTensor<Real>>* gy,
                       double sign) {
    for (std::size_t l = 0; l < layers; ++l) {
      const auto x = detail::row_of(xs[l], xi), y = detail::row_of(ys[l], yi);
      d2[l] = static_cast<double>(simd::squared_distance(x.data(), y.data(), x.size()));
      k[l] = families[l].from_squared_distance(d2[l]);
    }
    double prod = 1.0;
    for (double v : k) prod *= v;
    if (with_gradients) {
      for (std::size_t l = 0; l < layers; ++l) {
        double others = 1.0;
        for (std::size_t q = 0; q < layers; ++q)
          if (q != l) others *= k[q];
        const double coef = sign * scale * others * 2.0 * families[l].derivative(d2[l]);
        const auto x = detail::row_of(xs[l], xi), y = detail::row_of(ys[l], yi);
        const std::size_t d = x.size();
        Real* rx = (*gx)[l].data() + xi * d;
        Real* ry = (*gy)[l].data() + yi * d;
        for (std::size_t j = 0; j < d; ++j) {
          const double g = coef * (static_cast<double>(x[j]) - y[j]);
          rx[j] += static_cast<Real>(g);
          ry[j] -= static_cast<Real>(g);
        }
      }
    }
    return prod;
  };

  auto* gs = with_gradients ? &out.d_source : nullptr;
  auto* gt = with_gradients ? &out.d_target : nullptr;
  double sum = 0.0;
  for (std::size_t i = 0; i + 1 < n; i += 2) {
    const double ss = pair_term(source, i, gs, source, i + 1, gs, +1.0);
    const double tt = pair_term(target, i, gt, target, i + 1, gt, +1.0);
    const double st = pair_term(source, i, gs, target, i + 1, gt, -1.0);
    const double ts = pair_term(target, i, gt, source, i + 1, gs, -1.0);
    sum += (ss + tt) - (st + ts);
  }
  out.value = scale * sum;
  return out;
}

/// Number of quadruple summands jmmd_linear evaluates for batch size n.
constexpr std::size_t jmmd_quadruple_count(std::size_t n) { return n / 2; }

/// Outputs of one exit for a stacked batch: rows [0, n) are source samples,
/// rows [n, 2n) (when present) are target samples.
template <class Real>
struct ExitActivations {
  BasicTensor<Real> logits;
  std::vector<BasicTensor<Real>> taps;  // adaptation-layer activations, flattened to [rows, features]
};

struct LossConfig {
  double lambda = 1.0;
  std::vector<double> exit_weights;  // empty means w = 1 for every exit
  std::vector<double> bandwidth_multipliers = default_bandwidth_multipliers();
  std::optional<KernelFamily> fixed_kernel;  // overrides the per-step median heuristic
};

struct ExitLossValue {
  double supervised = 0.0;
  double transfer = 0.0;
  double total = 0.0;
};

struct TotalLossValue {
  double total = 0.0;
  std::vector<ExitLossValue> exits;
};

/// L_exit = CE(source logits) + lambda * JMMD(source taps, target taps).
/// When `grad` is given it receives dL/dlogits and dL/dtaps.
template <class Real>
ExitLossValue exit_loss(const ExitActivations<Real>& exit, std::span<const int> labels, const LossConfig& cfg,
                        ExitActivations<Real>* grad = nullptr) {
  const std::size_t n = labels.size();
  const std::size_t rows = exit.logits.dim(0);
  if (n == 0) throw ArgumentError("exit_loss: empty batch");
  const bool has_target = rows == 2 * n;
  if (rows != n && !has_target) {
    throw DimensionError("exit_loss: logits have " + std::to_string(rows) + " rows for " + std::to_string(n) +
                         " labels");
  }
  if (cfg.lambda < 0.0) throw ConfigError("lambda must be non-negative");

  const BasicTensor<Real> probs = softmax(exit.logits);
  ExitLossValue v;
  v.supervised = cross_entropy(probs, labels);
  if (grad) {
    grad->logits = cross_entropy_logit_gradient(probs, labels);
    grad->taps.clear();
    for (const auto& t : exit.taps) grad->taps.emplace_back(t.shape());
  }

  if (cfg.lambda > 0.0) {
    if (!has_target) throw ArgumentError("exit_loss: transfer term needs target rows");
    std::vector<BasicTensor<Real>> src, tgt;
    std::vector<KernelFamily> fams;
    for (const auto& t : exit.taps) {
      src.push_back(t.slice_rows(0, n));
      tgt.push_back(t.slice_rows(n, 2 * n));
      fams.push_back(cfg.fixed_kernel ? *cfg.fixed_kernel
                                      : median_heuristic_family(src.back(), tgt.back(), cfg.bandwidth_multipliers));
    }
    const auto j = jmmd_linear<Real>(fams, src, tgt, grad != nullptr);
    v.transfer = j.value;
    if (grad) {
      for (std::size_t l = 0; l < exit.taps.size(); ++l) {
        const std::size_t d = detail::feature_count(exit.taps[l]);
        Real* g = grad->taps[l].data();
        for (std::size_t i = 0; i < n * d; ++i) {
          g[i] += static_cast<Real>(cfg.lambda * j.d_source[l][i]);
          g[n * d + i] += static_cast<Real>(cfg.lambda * j.d_target[l][i]);
        }
      }
    }
  }
  v.total = v.supervised + cfg.lambda * v.transfer;
  return v;
}

inline std::vector<double> resolved_exit_weights(const LossConfig& cfg, std::size_t exits) {
  if (cfg.exit_weights.empty()) return std::vector<double>(exits, 1.0);
  if (cfg.exit_weights.size() != exits) {
    throw ConfigError("exit_weights has " + std::to_string(cfg.exit_weights.size()) + " entries for " +
                      std::to_string(exits) + " exits");
  }
  for (double w : cfg.exit_weights)
    if (!(w > 0.0)) throw ConfigError("exit weights must be positive");
  return cfg.exit_weights;
}

/// sum_e w_e L_exit_e. `grads`, when given, is resized to one entry per exit
/// holding w_e * dL_exit_e.
template <class Real>
TotalLossValue total_loss(std::span<const ExitActivations<Real>> exits, std::span<const int> labels,
                          const LossConfig& cfg, std::vector<ExitActivations<Real>>* grads = nullptr) {
  const auto weights = resolved_exit_weights(cfg, exits.size());
  TotalLossValue out;
  if (grads) grads->assign(exits.size(), {});
  for (std::size_t e = 0; e < exits.size(); ++e) {
    ExitActivations<Real>* g = grads ? &(*grads)[e] : nullptr;
    const ExitLossValue v = exit_loss(exits[e], labels, cfg, g);
    out.exits.push_back(v);
    out.total += weights[e] * v.total;
    if (g && weights[e] != 1.0) {
      for (auto& x : g->logits.storage()) x = static_cast<Real>(x * weights[e]);
      for (auto& t : g->taps)
        for (auto& x : t.storage()) x = static_cast<Real>(x * weights[e]);
    }
  }
  return out;
}

}  // namespace adan
