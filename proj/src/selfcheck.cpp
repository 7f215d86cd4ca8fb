#include "adan/selfcheck.hpp"

#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>

#include "adan/gradcheck.hpp"
#include "adan/layers.hpp"
#include "adan/losses.hpp"
#include "adan/network.hpp"
#include "adan/random.hpp"
#include "adan/router.hpp"
#include "adan/simd/kernels.hpp"
#include "adan/trainer.hpp"

namespace adan {

namespace {

constexpr double kGradTolerance = 1e-3;
constexpr double kEps = 1e-6;

Tensor64 randn(const Shape& shape, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  Tensor64 t(shape);
  for (auto& v : t.storage()) v = normal(rng);
  return t;
}

// Keeps values away from the ReLU kink so central differences stay smooth.
Tensor64 away_from_zero(Tensor64 t) {
  for (auto& v : t.storage())
    if (std::abs(v) < 1e-2) v = v < 0 ? -0.1 : 0.1;
  return t;
}

CheckResult verdict(std::string name, double worst, double tol, std::string detail = {}) {
  return {std::move(name), std::isfinite(worst) && worst < tol, worst, tol, std::move(detail)};
}

template <class Fn>
CheckResult over_points(const std::string& name, const SelfcheckOptions& opt, std::uint64_t stream, Fn&& fn) {
  Rng rng(derive_seed(opt.seed, stream));
  double worst = 0.0;
  try {
    for (int p = 0; p < opt.points; ++p) worst = std::max(worst, fn(rng));
  } catch (const std::exception& e) {
    return {name, false, std::numeric_limits<double>::infinity(), kGradTolerance, e.what()};
  }
  return verdict(name, worst, kGradTolerance, std::to_string(opt.points) + " points");
}

double conv_check(Rng& rng, std::size_t stride, int which, bool corrupt) {
  const Tensor64 x = randn({2, 2, 7, 7}, rng);
  const Tensor64 w = randn({3, 2, 3, 3}, rng, 0.5);
  const Tensor64 b = randn({3}, rng);
  const Tensor64 y = conv2d(x, w, b, stride);
  const Tensor64 r = randn(y.shape(), rng);
  auto grads = [&](const Tensor64& xi, const Tensor64& wi, const Tensor64& proj) {
    auto g = conv2d_backward(xi, wi, stride, proj);
    if (corrupt)
      for (auto& v : g.d_weights->storage()) v *= 1.01;
    return g;
  };
  switch (which) {
    case 0:
      return check_vjp([&](const Tensor64& v) { return conv2d(v, w, b, stride); },
                       [&](const Tensor64& v, const Tensor64& proj) { return grads(v, w, proj).d_input; }, x, r, kEps);
    case 1:
      return check_vjp([&](const Tensor64& v) { return conv2d(x, v, b, stride); },
                       [&](const Tensor64& v, const Tensor64& proj) { return *grads(x, v, proj).d_weights; }, w, r,
                       kEps);
    default:
      return check_vjp([&](const Tensor64& v) { return conv2d(x, w, v, stride); },
                       [&](const Tensor64&, const Tensor64& proj) { return *grads(x, w, proj).d_bias; }, b, r, kEps);
  }
}

double linear_check(Rng& rng, int which) {
  const Tensor64 x = randn({3, 5}, rng);
  const Tensor64 w = randn({4, 5}, rng);
  const Tensor64 b = randn({4}, rng);
  const Tensor64 r = randn({3, 4}, rng);
  switch (which) {
    case 0:
      return check_vjp([&](const Tensor64& v) { return linear(v, w, b); },
                       [&](const Tensor64& v, const Tensor64& p) { return linear_backward(v, w, p).d_input; }, x, r,
                       kEps);
    case 1:
      return check_vjp([&](const Tensor64& v) { return linear(x, v, b); },
                       [&](const Tensor64& v, const Tensor64& p) { return *linear_backward(x, v, p).d_weights; }, w,
                       r, kEps);
    default:
      return check_vjp([&](const Tensor64& v) { return linear(x, w, v); },
                       [&](const Tensor64&, const Tensor64& p) { return *linear_backward(x, w, p).d_bias; }, b, r,
                       kEps);
  }
}

double cross_entropy_check(Rng& rng) {
  const Tensor64 z = randn({4, 10}, rng, 2.0);
  const std::vector<int> labels{3, 0, 9, 3};
  return finite_difference_check([&](const Tensor64& v) { return cross_entropy(softmax(v), labels); },
                                 [&](const Tensor64& v) { return cross_entropy_logit_gradient(softmax(v), labels); },
                                 z, kEps);
}

double jmmd_check(Rng& rng) {
  const std::size_t n = 6;
  const std::vector<KernelFamily> fams{{{2.0, 4.0, 8.0}}, {{1.0, 2.0, 4.0}}};
  std::vector<Tensor64> src{randn({n, 3}, rng), randn({n, 2}, rng)};
  std::vector<Tensor64> tgt{randn({n, 3}, rng, 1.3), randn({n, 2}, rng, 0.8)};
  for (auto& t : tgt[0].storage()) t += 0.5;
  double worst = 0.0;
  for (int side = 0; side < 2; ++side) {
    for (std::size_t l = 0; l < 2; ++l) {
      auto& slot = side == 0 ? src[l] : tgt[l];
      const Tensor64 base = slot;
      auto value = [&](const Tensor64& v) {
        slot = v;
        const double out = jmmd_linear<double>(fams, src, tgt, false).value;
        slot = base;
        return out;
      };
      auto grad = [&](const Tensor64& v) {
        slot = v;
        auto j = jmmd_linear<double>(fams, src, tgt, true);
        slot = base;
        return side == 0 ? j.d_source[l] : j.d_target[l];
      };
      worst = std::max(worst, finite_difference_check(value, grad, base, kEps));
    }
  }
  return worst;
}

// A two-exit network small enough for a full finite-difference sweep over
// sampled parameters.
BasicNetwork<double> tiny_network() {
  std::vector<LayerSpec> backbone{LayerSpec::conv(3, 3), LayerSpec::relu(), LayerSpec::maxpool(),
                                  LayerSpec::conv(4, 3), LayerSpec::relu(), LayerSpec::flatten(),
                                  LayerSpec::dense(6),   LayerSpec::relu(), LayerSpec::dense(3)};
  std::vector<ExitSpec> exits{{2, {LayerSpec::conv(2, 3, 2), LayerSpec::relu(), LayerSpec::flatten(), LayerSpec::dense(3)}, {5, 6}},
                              {8, {}, {7, 8}}};
  return BasicNetwork<double>({1, 12, 12}, backbone, exits, 3);
}

double network_check(Rng& rng, bool corrupt) {
  auto net = tiny_network();
  net.init_params(rng());
  const std::size_t n = 4;
  const Tensor64 images = randn({2 * n, 1, 12, 12}, rng);
  const std::vector<int> labels{0, 2, 1, 2};
  LossConfig cfg;
  cfg.lambda = 1.0;
  cfg.fixed_kernel = KernelFamily{{0.5, 2.0, 8.0}};
  auto loss = [&]() {
    const auto trace = net.forward_full(images);
    return total_loss<double>(trace.exits, labels, cfg).total;
  };
  ForwardCache<double> cache;
  const auto trace = net.forward_full(images, &cache);
  std::vector<ExitActivations<double>> g;
  total_loss<double>(trace.exits, labels, cfg, &g);
  const auto analytic = net.backward(cache, g);
  auto params = net.parameters();
  double worst = 0.0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    const bool conv_weight = params[p].tensor->rank() == 4;
    auto& t = *params[p].tensor;
    const std::size_t probes = std::min<std::size_t>(t.size(), 6);
    for (std::size_t q = 0; q < probes; ++q) {
      const std::size_t i = uniform_below(rng, t.size());
      const double x0 = t[i];
      t[i] = x0 + kEps;
      const double fp = loss();
      t[i] = x0 - kEps;
      const double fm = loss();
      t[i] = x0;
      const double numeric = (fp - fm) / (2 * kEps);
      const double a = analytic[p][i] * (corrupt && conv_weight ? 1.01 : 1.0);
      worst = std::max(worst, std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-6}));
    }
  }
  return worst;
}

double explicit_mmd(const KernelFamily& fam, const Tensor64& xs, const Tensor64& xt) {
  const std::size_t ns = xs.dim(0), nt = xt.dim(0), d = xs.dim(1);
  auto k = [&](const double* a, const double* b) {
    double d2 = 0.0;
    for (std::size_t j = 0; j < d; ++j) d2 += (a[j] - b[j]) * (a[j] - b[j]);
    double s = 0.0;
    for (double bw : fam.bandwidths) s += std::exp(-d2 / (2.0 * bw));
    return s;
  };
  double ss = 0.0, st = 0.0, tt = 0.0;
  for (std::size_t i = 0; i < ns; ++i)
    for (std::size_t j = 0; j < ns; ++j) ss += k(xs.data() + i * d, xs.data() + j * d);
  for (std::size_t i = 0; i < ns; ++i)
    for (std::size_t j = 0; j < nt; ++j) st += k(xs.data() + i * d, xt.data() + j * d);
  for (std::size_t i = 0; i < nt; ++i)
    for (std::size_t j = 0; j < nt; ++j) tt += k(xt.data() + i * d, xt.data() + j * d);
  return ss / double(ns * ns) - 2.0 * st / double(ns * nt) + tt / double(nt * nt);
}

Tensor random_images(std::size_t n, Rng& rng) {
  std::normal_distribution<float> normal(0.0f, 1.0f);
  Tensor t({n, 1, 32, 32});
  for (auto& v : t.storage()) v = normal(rng);
  return t;
}

}  // namespace

std::vector<CheckResult> gradient_checks(const SelfcheckOptions& opt) {
  std::vector<CheckResult> out;
  const char* parts[] = {"input", "weights", "bias"};
  for (std::size_t stride : {1, 2}) {
    for (int which = 0; which < 3; ++which) {
      const std::string name = "grad conv2d stride " + std::to_string(stride) + " " + parts[which];
      out.push_back(over_points(name, opt, 10 + stride * 3 + which, [&](Rng& rng) {
        return conv_check(rng, stride, which, opt.corrupt_conv_gradient);
      }));
    }
  }
  for (int which = 0; which < 3; ++which) {
    out.push_back(over_points(std::string("grad linear ") + parts[which], opt, 20 + which,
                              [&](Rng& rng) { return linear_check(rng, which); }));
  }
  out.push_back(over_points("grad maxpool2", opt, 30, [&](Rng& rng) {
    const Tensor64 x = randn({2, 3, 6, 4}, rng);
    const Tensor64 r = randn({2, 3, 3, 2}, rng);
    return check_vjp([](const Tensor64& v) { return maxpool2(v); },
                     [](const Tensor64& v, const Tensor64& p) { return maxpool2_backward(v, p); }, x, r, kEps);
  }));
  out.push_back(over_points("grad relu", opt, 31, [&](Rng& rng) {
    const Tensor64 x = away_from_zero(randn({3, 7}, rng));
    const Tensor64 r = randn({3, 7}, rng);
    return check_vjp([](const Tensor64& v) { return relu(v); },
                     [](const Tensor64& v, const Tensor64& p) { return relu_backward(v, p); }, x, r, kEps);
  }));
  out.push_back(over_points("grad pad_spatial", opt, 32, [&](Rng& rng) {
    const Tensor64 x = randn({2, 1, 3, 4}, rng);
    const Tensor64 r = randn({2, 1, 7, 8}, rng);
    return check_vjp([](const Tensor64& v) { return pad_spatial(v, 2); },
                     [](const Tensor64&, const Tensor64& p) { return pad_spatial_backward(p, 2); }, x, r, kEps);
  }));
  out.push_back(over_points("grad flatten", opt, 33, [&](Rng& rng) {
    const Tensor64 x = randn({2, 2, 3, 3}, rng);
    const Tensor64 r = randn({2, 18}, rng);
    return check_vjp([](const Tensor64& v) { return v.reshaped({2, 18}); },
                     [](const Tensor64& v, const Tensor64& p) { return p.reshaped(v.shape()); }, x, r, kEps);
  }));
  out.push_back(over_points("grad softmax cross_entropy", opt, 34, cross_entropy_check));
  out.push_back(over_points("grad jmmd_linear", opt, 35, jmmd_check));
  out.push_back(over_points("grad two-exit network loss", opt, 36,
                            [&](Rng& rng) { return network_check(rng, opt.corrupt_conv_gradient); }));
  return out;
}

std::vector<CheckResult> mmd_checks(const SelfcheckOptions& opt) {
  std::vector<CheckResult> out;
  Rng rng(derive_seed(opt.seed, 50));
  double worst = 0.0;
  for (int p = 0; p < opt.points; ++p) {
    const std::size_t ns = 1 + uniform_below(rng, 16), nt = 1 + uniform_below(rng, 16), d = 1 + uniform_below(rng, 5);
    const Tensor64 xs = randn({ns, d}, rng), xt = randn({nt, d}, rng, 1.5);
    const KernelFamily fam{{0.5, 1.0, 2.0, 4.0}};
    worst = std::max(worst, std::abs(mmd_quadratic(fam, xs, xt) - explicit_mmd(fam, xs, xt)));
  }
  out.push_back(verdict("mmd_quadratic vs explicit double loop", worst, 1e-10));

  worst = 0.0;
  for (int p = 0; p < opt.points; ++p) {
    const std::size_t n = 2 * (1 + uniform_below(rng, 16));
    std::vector<Tensor64> a{randn({n, 4}, rng), randn({n, 3}, rng)};
    const std::vector<KernelFamily> fams{{{1.0, 2.0}}, {{0.5}}};
    worst = std::max(worst, std::abs(jmmd_linear<double>(fams, a, a, false).value));
  }
  out.push_back(verdict("jmmd_linear identical pairs", worst, 1e-12));
  return out;
}

std::vector<CheckResult> routing_checks(const SelfcheckOptions& opt) {
  std::vector<CheckResult> out;
  Rng rng(derive_seed(opt.seed, 60));
  Network net = build_lenet_adan(10);
  net.init_params(derive_seed(opt.seed, 61));
  const std::size_t n = 24;
  const Tensor images = random_images(n, rng);
  const auto trace = net.forward_full(images);

  std::size_t mismatched_logits = 0, wrong_final = 0, not_exit1 = 0, repeated_layers = 0, excess_ops = 0;
  const OpCounts full = [&] {
    OpCounts c;
    net.forward_full(images.slice_rows(0, 1), nullptr, &c);
    return c;
  }();
  const double ln10 = std::log(10.0);
  const auto inf = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    const Tensor img = images.slice_rows(i, i + 1);
    StagedState<float> state;
    for (std::size_t e = 1; e <= net.exit_count(); ++e) {
      const Tensor z = net.forward_staged(img, e, state);
      const auto& zf = trace.exits[e - 1].logits;
      for (std::size_t c = 0; c < z.size(); ++c)
        if (z[c] != zf[i * z.size() + c]) ++mismatched_logits;
    }
    const auto final_row = trace.exits.back().logits.row(i);
    const auto d_never = route_sample(net, img, ThresholdPolicy::uniform(-inf, net.exit_count()));
    if (d_never.exit != net.exit_count() || d_never.predicted != static_cast<int>(argmax(final_row))) ++wrong_final;
    const auto d_always = route_sample(net, img, ThresholdPolicy::uniform(ln10, net.exit_count()));
    if (d_always.exit != 1) ++not_exit1;
    for (double t : {-inf, 0.5, 1.0, 2.0, ln10}) {
      OpCounts c;
      route_sample(net, img, ThresholdPolicy::uniform(t, net.exit_count()), &c);
      for (auto v : c.backbone) repeated_layers += v > 1;
      if (c.total() > full.total()) ++excess_ops;
    }
  }
  out.push_back(verdict("staged logits equal full forward", double(mismatched_logits), 0.5));
  out.push_back(verdict("threshold -inf reproduces final exit", double(wrong_final), 0.5));
  out.push_back(verdict("threshold ln 10 exits at exit 1", double(not_exit1), 0.5));
  out.push_back(verdict("backbone layers run at most once", double(repeated_layers), 0.5));
  out.push_back(verdict("routed work within full forward", double(excess_ops), 0.5));
  return out;
}

std::vector<CheckResult> simd_checks(const SelfcheckOptions& opt) {
  std::vector<CheckResult> out;
  const simd::KernelTable& ref = simd::scalar_kernels();
  for (simd::Isa isa : simd::available_isas()) {
    if (isa == simd::Isa::Scalar) continue;
    const simd::KernelTable& k = isa == simd::Isa::Avx2 ? *simd::avx2_kernels() : ref;
    Rng rng(derive_seed(opt.seed, 70));
    std::normal_distribution<float> normal(0.0f, 1.0f);
    auto vec = [&](std::size_t n) {
      std::vector<float> v(n);
      for (auto& x : v) x = normal(rng);
      return v;
    };
    double worst = 0.0;
    auto rel = [](double a, double b, double scale) { return std::abs(a - b) / std::max(scale, 1e-6); };
    for (std::size_t n : {1, 3, 7, 8, 9, 31, 64, 100, 257}) {
      const auto a = vec(n), b = vec(n);
      const double scale = std::sqrt(double(n));
      worst = std::max(worst, rel(k.dot(a.data(), b.data(), n), ref.dot(a.data(), b.data(), n), scale));
      worst = std::max(worst, rel(k.squared_distance(a.data(), b.data(), n), ref.squared_distance(a.data(), b.data(), n),
                                  double(n)));
      auto y1 = b, y2 = b;
      k.axpy(0.7f, a.data(), y1.data(), n);
      ref.axpy(0.7f, a.data(), y2.data(), n);
      for (std::size_t i = 0; i < n; ++i) worst = std::max(worst, rel(y1[i], y2[i], 1.0));
    }
    using Gemm = void (*)(std::size_t, std::size_t, std::size_t, const float*, const float*, float*, bool);
    const std::pair<Gemm, Gemm> gemms[] = {{k.gemm_nn, ref.gemm_nn}, {k.gemm_nt, ref.gemm_nt}, {k.gemm_tn, ref.gemm_tn}};
    const std::size_t dims[][3] = {{1, 1, 1}, {3, 5, 7}, {6, 196, 25}, {16, 100, 150}, {5, 17, 9}, {9, 8, 33}, {4, 1, 12}};
    for (const auto& [fast, slow] : gemms) {
      for (const auto& d : dims) {
        const std::size_t m = d[0], n = d[1], kk = d[2];
        const auto a = vec(m * kk), b = vec(kk * n);
        for (bool acc : {false, true}) {
          auto c1 = vec(m * n);
          auto c2 = c1;
          fast(m, n, kk, a.data(), b.data(), c1.data(), acc);
          slow(m, n, kk, a.data(), b.data(), c2.data(), acc);
          for (std::size_t i = 0; i < m * n; ++i) worst = std::max(worst, rel(c1[i], c2[i], std::sqrt(double(kk)) + 1));
        }
      }
    }
    out.push_back(verdict(std::string("simd ") + std::string(simd::isa_name(isa)) + " vs scalar", worst, 1e-5));
  }
  return out;
}

std::vector<CheckResult> run_selfcheck(const SelfcheckOptions& opt) {
  std::vector<CheckResult> all;
  for (auto part : {gradient_checks, mmd_checks, routing_checks, simd_checks}) {
    auto r = part(opt);
    all.insert(all.end(), r.begin(), r.end());
  }
  return all;
}

void print_check_table(std::ostream& out, const std::vector<CheckResult>& results) {
  std::size_t width = 5;
  for (const auto& r : results) width = std::max(width, r.name.size());
  out << std::left << std::setw(static_cast<int>(width)) << "check" << "  result  " << std::setw(12) << "value"
      << "  tolerance\n";
  for (const auto& r : results) {
    std::ostringstream v, t;
    v << std::setprecision(3) << r.value;
    t << std::setprecision(3) << r.tolerance;
    out << std::left << std::setw(static_cast<int>(width)) << r.name << "  " << (r.passed ? "PASS  " : "FAIL  ")
        << "  " << std::setw(12) << v.str() << "  " << t.str();
    if (!r.detail.empty()) out << "  (" << r.detail << ")";
    out << "\n";
  }
}

}  // namespace adan
