#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>

#include "obm/batch_means.hpp"
#include "obm/error.hpp"
#include "obm/linalg.hpp"

namespace obm {

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

/// Standard normal quantile. Acklam's rational approximation (relative error
/// about 1e-9) followed by one Halley step on the erfc-based CDF.
inline double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw std::domain_error("normal_quantile: p must lie in (0, 1)");
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                 -2.759285104469687e+02, 1.383577518672690e+02,
                                 -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                 -1.556989798598866e+02, 6.680131188771972e+01,
                                 -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                 -2.400758277161838e+00, -2.549732539343734e+00,
                                 4.374664141464968e+00, 2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                 2.445134137142996e+00, 3.754408661907416e+00};
  constexpr double p_low = 0.02425;

  double x;
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - p_low) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log1p(-p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }

  const double e = normal_cdf(x) - p;
  const double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * x * x);
  return x - u / (1.0 + 0.5 * x * u);
}

struct confidence_interval {
  double lo = 0.0;
  double hi = 0.0;
  double level = 0.95;
  std::uint64_t k = 0;

  double width() const { return hi - lo; }
  double center() const { return 0.5 * (lo + hi); }
  /// Closed interval: the endpoints count as covered.
  bool contains(double x) const { return lo <= x && x <= hi; }
};

/// Interval for v'theta* centered at v'mean with half width
/// z_{(1+level)/2} sqrt(v' Sigma v / k).
inline confidence_interval ci(const vector& theta_bar, const matrix& sigma_hat,
                              const vector& v, std::uint64_t k, double level = 0.95) {
  if (!(level > 0.0 && level < 1.0)) throw std::domain_error("ci: level must lie in (0, 1)");
  if (k < 1) throw std::invalid_argument("ci: k must be >= 1");
  require_dim(v.size(), theta_bar.size(), "ci: projection");
  require_dim(sigma_hat.rows(), theta_bar.size(), "ci: covariance rows");
  require_dim(sigma_hat.cols(), theta_bar.size(), "ci: covariance cols");

  double var = v.dot(sigma_hat * v);
  if (var < 0.0) {
    // Tolerance relative to the scale of the quadratic form.
    const double scale = std::abs(sigma_hat.trace()) * v.squaredNorm();
    if (var < -1e-10 * scale)
      throw numerical_error("ci: v' Sigma v = " + std::to_string(var) + " is negative");
    var = 0.0;
  }
  const double center = v.dot(theta_bar);
  const double half = normal_quantile(0.5 * (1.0 + level)) * std::sqrt(var / static_cast<double>(k));
  return {center - half, center + half, level, k};
}

inline confidence_interval ci(const vector& theta_bar, const covariance_estimate& est,
                              const vector& v, double level = 0.95) {
  return ci(theta_bar, est.sigma_hat, v, est.n, level);
}

struct mis_report {
  double mis = 0.0;
  double alpha1 = 0.05;
  std::size_t n_eval = 0;
};

/// Sample mean interval score of [lo, hi] against observations z.
inline mis_report mis_sample(double lo, double hi, double alpha1, std::span<const double> z) {
  if (!(alpha1 > 0.0 && alpha1 < 1.0)) throw std::domain_error("mis_sample: alpha1 must lie in (0, 1)");
  if (lo > hi) throw std::invalid_argument("mis_sample: lo > hi");
  if (z.empty()) throw std::invalid_argument("mis_sample: no observations");
  const double penalty = 2.0 / alpha1;
  double total = 0.0;
  for (double zi : z) {
    double s = hi - lo;
    if (zi > hi) s += penalty * (zi - hi);
    if (zi < lo) s += penalty * (lo - zi);
    total += s;
  }
  return {total / static_cast<double>(z.size()), alpha1, z.size()};
}

/// Fraction of intervals that contain truth.
inline double coverage(std::span<const confidence_interval> intervals, double truth) {
  if (intervals.empty()) throw std::invalid_argument("coverage: no intervals");
  std::size_t hit = 0;
  for (const auto& c : intervals) hit += c.contains(truth) ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(intervals.size());
}

}  // namespace obm
