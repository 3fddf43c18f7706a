#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>

#include "obm/error.hpp"

namespace obm {

/// Step sizes eta_k = eta0 * k^{-a}, 1 < 2a < 2.
class step_schedule {
 public:
  step_schedule(double eta0 = 2.0, double a = 0.5005) : eta0_(eta0), a_(a) {
    if (!(eta0 > 0.0) || !std::isfinite(eta0))
      throw config_error("step_schedule: eta0 must be positive and finite");
    if (!(a > 0.5 && a < 1.0))
      throw config_error("step_schedule: exponent a must lie in (1/2, 1)");
  }

  double operator()(std::uint64_t k) const {
    return eta0_ * std::pow(static_cast<double>(k), -a_);
  }

  double eta0() const { return eta0_; }
  double a() const { return a_; }

 private:
  double eta0_;
  double a_;
};

/// Move thresholds d_k = d0 * k^{-b} and nested balls K_q of radius
/// r0 * growth^q. Infinite d0 / r0 disable the respective test.
class truncation_schedule {
 public:
  truncation_schedule(double d0 = 10.0, double b = 0.3, double r0 = 10.0,
                      double growth = 2.0)
      : d0_(d0), b_(b), r0_(r0), growth_(growth) {
    if (!(d0 > 0.0)) throw config_error("truncation_schedule: d0 must be positive");
    if (!(b > 0.0 && b < 0.375))
      throw config_error("truncation_schedule: exponent b must lie in (0, 3/8)");
    if (!(r0 > 0.0)) throw config_error("truncation_schedule: r0 must be positive");
    if (!(growth > 1.0) || !std::isfinite(growth))
      throw config_error("truncation_schedule: growth must be finite and > 1");
  }

  static truncation_schedule disabled() {
    constexpr double inf = std::numeric_limits<double>::infinity();
    return truncation_schedule(inf, 0.3, inf, 2.0);
  }

  double threshold(std::uint64_t k) const {
    if (std::isinf(d0_)) return d0_;
    return d0_ * std::pow(static_cast<double>(k), -b_);
  }

  double radius(std::uint64_t q) const {
    if (std::isinf(r0_)) return r0_;
    return r0_ * std::pow(growth_, static_cast<double>(q));
  }

  double d0() const { return d0_; }
  double b() const { return b_; }
  double r0() const { return r0_; }
  double growth() const { return growth_; }

 private:
  double d0_;
  double b_;
  double r0_;
  double growth_;
};

}  // namespace obm
