#pragma once

#include <cmath>
#include <limits>

#include "dipw/error.hpp"

namespace dipw {

/// Standard logistic function psi(u) = 1/(1+exp(-u)).
/// Branches on the sign of u so that exp() never overflows for |u| <= 700;
/// the result is kept strictly inside (0,1), capping at the largest double
/// below 1 where the true value would round to 1.
inline double logistic(double u) {
  if (u >= 0.0) {
    const double v = 1.0 / (1.0 + std::exp(-u));
    return v < 1.0 ? v : 1.0 - std::numeric_limits<double>::epsilon() / 2.0;
  }
  const double e = std::exp(u);
  return e / (1.0 + e);
}

/// psi'(u) = psi(u){1 - psi(u)}.
inline double logistic_deriv(double u) {
  const double p = logistic(u);
  return p * (1.0 - p);
}

/// Soft-threshold operator: sign(z) * max(|z| - t, 0).
inline double soft_threshold(double z, double t) {
  if (z > t) return z - t;
  if (z < -t) return z + t;
  return 0.0;
}

inline double clamp01(double p, double clip) {
  if (p < clip) return clip;
  if (p > 1.0 - clip) return 1.0 - clip;
  return p;
}

/// Standard normal CDF.
inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

/// Inverse standard normal CDF. Acklam's rational approximation refined by
/// one Halley step against erfc, accurate to ~1e-15 over (0,1).
inline double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw ConfigError("normal_quantile: p must lie in (0,1)");

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

  const double plow = 0.02425;
  double x;
  if (p < plow) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - plow) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log(1.0 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }

  // Halley refinement
  const double e = normal_cdf(x) - p;
  const double u = e * std::sqrt(2.0 * M_PI) * std::exp(x * x / 2.0);
  x = x - u / (1.0 + x * u / 2.0);
  return x;
}

/// Upper alpha/2 standard normal quantile used by the confidence intervals.
inline double z_alpha(double alpha) { return normal_quantile(1.0 - alpha / 2.0); }

}  // namespace dipw
