#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "adan/error.hpp"
#include "adan/tensor.hpp"

namespace adan {

using ScalarFunction = std::function<double(const Tensor64&)>;
using GradientFunction = std::function<Tensor64(const Tensor64&)>;

/// Worst per-coordinate relative error between `gradient(point)` and central
/// differences (f(x+eps) - f(x-eps)) / 2eps. The denominator is
/// max(|analytic|, |numeric|, 1e-6) so coordinates where both vanish do not
/// blow up the ratio.
inline double finite_difference_check(const ScalarFunction& f, const GradientFunction& gradient,
                                      const Tensor64& point, double epsilon) {
  if (!(epsilon >= 1e-7 && epsilon <= 1e-3)) {
    throw ArgumentError("finite_difference_check: epsilon must lie in [1e-7, 1e-3]");
  }
  const Tensor64 analytic = gradient(point);
  if (analytic.shape() != point.shape()) {
    throw DimensionError("finite_difference_check: gradient shape " + shape_string(analytic.shape()) +
                         " differs from point shape " + shape_string(point.shape()));
  }
  if (!analytic.all_finite()) throw NumericError("finite_difference_check: analytic gradient is not finite");
  Tensor64 probe = point;
  double worst = 0.0;
  for (std::size_t i = 0; i < point.size(); ++i) {
    const double x0 = probe[i];
    probe[i] = x0 + epsilon;
    const double fp = f(probe);
    probe[i] = x0 - epsilon;
    const double fm = f(probe);
    probe[i] = x0;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw NumericError("finite_difference_check: non-finite function value at coordinate " + std::to_string(i));
    }
    const double numeric = (fp - fm) / (2.0 * epsilon);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-6});
    worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
  }
  return worst;
}

/// Checks a tensor-valued op through the scalar probe f(x) = <r, op(x)>,
/// whose gradient is op's vector-Jacobian product with r.
template <class Forward, class Backward>
double check_vjp(Forward&& forward, Backward&& backward, const Tensor64& point, const Tensor64& projection,
                 double epsilon) {
  ScalarFunction f = [&](const Tensor64& x) {
    const Tensor64 y = forward(x);
    if (y.size() != projection.size()) throw DimensionError("check_vjp: projection size mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += projection[i] * y[i];
    return s;
  };
  GradientFunction g = [&](const Tensor64& x) -> Tensor64 { return backward(x, projection); };
  return finite_difference_check(f, g, point, epsilon);
}

}  // namespace adan
