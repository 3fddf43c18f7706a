#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <string>

#include "obm/error.hpp"

namespace obm {

using vector = Eigen::VectorXd;
using matrix = Eigen::MatrixXd;

inline void require_dim(Eigen::Index got, Eigen::Index want, const char* what) {
  if (got != want)
    throw std::invalid_argument(std::string(what) + ": dimension " +
                                std::to_string(got) + ", expected " +
                                std::to_string(want));
}

template <typename Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& m) {
  return m.allFinite();
}

/// Largest singular value by power iteration on M^T M.
///
/// The start vector is fixed (1, 1 + 1/d, 1 + 2/d, ...) so the result is a
/// pure function of the input. Iteration stops once the Rayleigh quotient
/// changes by less than 1e-13 relative; this puts the returned norm well
/// inside the 1e-9 contract.
inline double spectral_norm(const matrix& m) {
  if (m.size() == 0) return 0.0;
  if (!m.allFinite()) throw numerical_error("spectral_norm: non-finite entries");
  const matrix g = m.transpose() * m;
  const Eigen::Index n = g.rows();
  vector x(n);
  for (Eigen::Index i = 0; i < n; ++i)
    x[i] = 1.0 + static_cast<double>(i) / static_cast<double>(n);
  x.normalize();

  double lambda = x.dot(g * x);
  if (lambda == 0.0) {
    // Start vector in the null space; fall back to the largest column.
    Eigen::Index col = 0;
    g.diagonal().maxCoeff(&col);
    if (g(col, col) == 0.0) return 0.0;
    x = g.col(col).normalized();
    lambda = x.dot(g * x);
  }
  for (int it = 0; it < 100000; ++it) {
    vector y = g * x;
    const double ny = y.norm();
    if (ny == 0.0) break;
    x = y / ny;
    const double next = x.dot(g * x);
    const bool done = std::abs(next - lambda) <= 1e-13 * std::abs(next);
    lambda = next;
    if (done) break;
  }
  return std::sqrt(std::max(lambda, 0.0));
}

inline double frobenius_norm(const matrix& m) { return m.norm(); }

}  // namespace obm
