#pragma once

#include <cmath>
#include <string>
#include <string_view>

#include "obm/error.hpp"
#include "obm/linalg.hpp"

namespace obm {

/// One observation x = (u, y). Classification labels are stored as +/-1.
struct sample {
  vector u;
  double y = 0.0;
};

enum class objective_kind { linear_sq, logistic_l2 };

inline objective_kind parse_objective_kind(std::string_view s) {
  if (s == "linear_sq" || s == "linear") return objective_kind::linear_sq;
  if (s == "logistic_l2" || s == "logistic") return objective_kind::logistic_l2;
  throw config_error("unknown objective '" + std::string(s) + "'");
}

inline std::string to_string(objective_kind k) {
  return k == objective_kind::linear_sq ? "linear_sq" : "logistic_l2";
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// Per-sample losses
///   linear_sq:   F = 1/2 (y - u'theta)^2
///   logistic_l2: F = log(1 + exp(-y u'theta)) + reg/2 |theta|^2
struct objective {
  objective_kind kind = objective_kind::linear_sq;
  double reg = 0.0;

  objective() = default;
  objective(objective_kind k, double r = 0.0) : kind(k), reg(r) {
    if (!(r >= 0.0) || !std::isfinite(r))
      throw config_error("objective: reg must be a nonnegative finite number");
  }

  static objective linear() { return {objective_kind::linear_sq, 0.0}; }
  static objective logistic(double reg = 0.01) {
    return {objective_kind::logistic_l2, reg};
  }

  bool is_classification() const { return kind == objective_kind::logistic_l2; }

  double loss(const vector& theta, const sample& s) const {
    check(theta, s);
    const double margin = s.u.dot(theta);
    if (kind == objective_kind::linear_sq) {
      const double r = s.y - margin;
      return 0.5 * r * r;
    }
    // log(1 + e^{-z}) written to avoid overflow for large |z|
    const double z = s.y * margin;
    const double l = z > 0 ? std::log1p(std::exp(-z)) : -z + std::log1p(std::exp(z));
    return l + 0.5 * reg * theta.squaredNorm();
  }

  /// Writes the stochastic gradient into out (resized as needed). Hot path.
  void gradient(const vector& theta, const sample& s, vector& out) const {
    check(theta, s);
    const double margin = s.u.dot(theta);
    if (kind == objective_kind::linear_sq) {
      out.noalias() = -(s.y - margin) * s.u;
    } else {
      out.noalias() = (-s.y * sigmoid(-s.y * margin)) * s.u;
      if (reg != 0.0) out.noalias() += reg * theta;
    }
  }

  vector gradient(const vector& theta, const sample& s) const {
    vector g(theta.size());
    gradient(theta, s, g);
    return g;
  }

  matrix hessian(const vector& theta, const sample& s) const {
    check(theta, s);
    if (kind == objective_kind::linear_sq) return s.u * s.u.transpose();
    const double p = sigmoid(s.u.dot(theta));
    matrix h = (p * (1.0 - p)) * (s.u * s.u.transpose());
    h.diagonal().array() += reg;
    return h;
  }

 private:
  void check(const vector& theta, const sample& s) const {
    require_dim(s.u.size(), theta.size(), "objective: feature vector");
    if (!theta.allFinite() || !s.u.allFinite() || !std::isfinite(s.y))
      throw numerical_error("objective: non-finite input");
    if (kind == objective_kind::logistic_l2 && s.y != 1.0 && s.y != -1.0)
      throw std::invalid_argument("objective: logistic label must be +1 or -1");
  }
};

}  // namespace obm
