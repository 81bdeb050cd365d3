#include "mixl/draws.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>
#include <vector>

#include "mixl/rng.hpp"

namespace mixl {

namespace {

// Acklam's rational approximation for the inverse normal CDF.
double acklam(double u) {
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};
  const double ulow = 0.02425;
  if (u < ulow) {
    const double q = std::sqrt(-2.0 * std::log(u));
    return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  if (u > 1.0 - ulow) {
    const double q = std::sqrt(-2.0 * std::log(1.0 - u));
    return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  const double q = u - 0.5;
  const double r = q * q;
  return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
         (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
}

}  // namespace

namespace {

// Lower half only (u <= 0.5): the erfc evaluation is cancellation-free
// there, so one Halley step reaches near machine precision.
double inverse_cdf_lower(double u) {
  double x = acklam(u);
  static const double inv_sqrt2 = 0.7071067811865475244;
  static const double sqrt_2pi = 2.5066282746310005024;
  const double e = 0.5 * std::erfc(-x * inv_sqrt2) - u;
  const double pdf = std::exp(-0.5 * x * x) / sqrt_2pi;
  const double t = e / pdf;
  return x - t / (1.0 + 0.5 * x * t);
}

}  // namespace

double normal_inverse_cdf(double u) {
  if (!(u > 0.0 && u < 1.0))
    throw std::invalid_argument("normal_inverse_cdf: u must lie in (0, 1)");
  if (u == 0.5) return 0.0;
  // 1 - u is exact for u >= 0.5, so reflecting keeps the upper tail as
  // accurate as the lower and makes the function exactly antisymmetric.
  return u > 0.5 ? -inverse_cdf_lower(1.0 - u) : inverse_cdf_lower(u);
}

DrawBatch mlhs_normal_draws(int num_draws, int dim, std::uint64_t seed) {
  if (num_draws < 1 || dim < 1)
    throw std::invalid_argument("mlhs_normal_draws: need num_draws >= 1, dim >= 1");
  DrawBatch batch;
  batch.kind = DrawKind::mlhs;
  batch.seed = seed;
  batch.draws.resize(num_draws, dim);
  auto eng = make_engine(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<int> order(static_cast<std::size_t>(num_draws));
  for (int k = 0; k < dim; ++k) {
    double shift = unif(eng);
    while (shift <= 0.0) shift = unif(eng);  // keep u strictly inside (0, 1)
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), eng);
    for (int i = 0; i < num_draws; ++i) {
      const double u = (order[static_cast<std::size_t>(i)] + shift) / num_draws;
      batch.draws(i, k) = normal_inverse_cdf(u);
    }
  }
  return batch;
}

DrawBatch pseudo_normal_draws(int num_draws, int dim, std::uint64_t seed) {
  if (num_draws < 1 || dim < 1)
    throw std::invalid_argument("pseudo_normal_draws: need num_draws >= 1, dim >= 1");
  DrawBatch batch;
  batch.kind = DrawKind::pseudo;
  batch.seed = seed;
  batch.draws.resize(num_draws, dim);
  auto eng = make_engine(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int i = 0; i < num_draws; ++i)
    for (int k = 0; k < dim; ++k) batch.draws(i, k) = normal(eng);
  return batch;
}

}  // namespace mixl
