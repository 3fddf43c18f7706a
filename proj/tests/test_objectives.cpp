#include <gtest/gtest.h>

#include <cmath>

#include "obm/objectives.hpp"
#include "obm/random.hpp"

namespace {

using obm::matrix;
using obm::objective;
using obm::sample;
using obm::vector;

vector vec(std::initializer_list<double> xs) {
  vector v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v[i++] = x;
  return v;
}

// Central differences with step 1e-5, independent of the analytic forms.
vector fd_gradient(const objective& f, const vector& theta, const sample& s) {
  constexpr double h = 1e-5;
  vector g(theta.size());
  for (Eigen::Index j = 0; j < theta.size(); ++j) {
    vector p = theta, m = theta;
    p[j] += h;
    m[j] -= h;
    g[j] = (f.loss(p, s) - f.loss(m, s)) / (2 * h);
  }
  return g;
}

matrix fd_hessian(const objective& f, const vector& theta, const sample& s) {
  constexpr double h = 1e-5;
  matrix H(theta.size(), theta.size());
  for (Eigen::Index j = 0; j < theta.size(); ++j) {
    vector p = theta, m = theta;
    p[j] += h;
    m[j] -= h;
    H.col(j) = (f.gradient(p, s) - f.gradient(m, s)) / (2 * h);
  }
  return H;
}

double rel(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(a)); }

sample random_sample(obm::rng& g, int d, bool classification) {
  sample s;
  s.u.resize(d);
  for (int j = 0; j < d; ++j) s.u[j] = g.normal();
  s.y = classification ? (g.bernoulli(0.5) ? 1.0 : -1.0) : 2.0 * g.normal();
  return s;
}

TEST(Objectives, LinearGradientExamples) {
  const objective f = objective::linear();
  EXPECT_EQ(f.gradient(vec({0, 0}), {vec({1, 0}), 0.0}), vec({0, 0}));
  EXPECT_EQ(f.gradient(vec({1, 1}), {vec({1, 2}), 0.0}), vec({3, 6}));
}

TEST(Objectives, LogisticGradientAtOrigin) {
  const objective f(obm::objective_kind::logistic_l2, 0.0);
  const vector g = f.gradient(vec({0, 0}), {vec({1, 0}), 1.0});
  EXPECT_DOUBLE_EQ(g[0], -0.5);
  EXPECT_DOUBLE_EQ(g[1], 0.0);
}

TEST(Objectives, HessianExamples) {
  const objective lin = objective::linear();
  EXPECT_EQ(lin.hessian(vec({0.3, -2}), {vec({1, 0}), 5.0}), (matrix(2, 2) << 1, 0, 0, 0).finished());

  const objective logit(obm::objective_kind::logistic_l2, 0.0);
  EXPECT_EQ(logit.hessian(vec({0, 0}), {vec({1, 0}), 1.0}),
            (matrix(2, 2) << 0.25, 0, 0, 0).finished());

  const objective reg(obm::objective_kind::logistic_l2, 0.005);
  EXPECT_EQ(reg.hessian(vec({0.7, 1.1}), {vec({0, 0}), -1.0}), 0.005 * matrix::Identity(2, 2));
}

TEST(Objectives, Errors) {
  const objective f = objective::linear();
  EXPECT_THROW(f.gradient(vec({0, 0}), {vec({1, 0, 0}), 0.0}), std::invalid_argument);
  EXPECT_THROW(f.gradient(vec({0, std::nan("")}), {vec({1, 0}), 0.0}), obm::numerical_error);
  const objective l = objective::logistic(0.01);
  EXPECT_THROW(l.gradient(vec({0, 0}), {vec({1, 0}), 0.0}), std::invalid_argument);
  EXPECT_THROW(objective(obm::objective_kind::logistic_l2, -1.0), obm::config_error);
}

TEST(Objectives, GradientMatchesFiniteDifferences) {
  obm::rng g(17);
  for (const objective& f : {objective::linear(), objective::logistic(0.005), objective::logistic(0.0)}) {
    for (int trial = 0; trial < 1000; ++trial) {
      const int d = 1 + static_cast<int>(g.uniform_index(6));
      vector theta(d);
      for (int j = 0; j < d; ++j) theta[j] = g.normal();
      const sample s = random_sample(g, d, f.is_classification());
      const vector a = f.gradient(theta, s);
      const vector n = fd_gradient(f, theta, s);
      for (int j = 0; j < d; ++j) ASSERT_LE(rel(a[j], n[j]), 1e-6) << obm::to_string(f.kind);
      const matrix H = f.hessian(theta, s);
      const matrix Hn = fd_hessian(f, theta, s);
      for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) ASSERT_LE(rel(H(i, j), Hn(i, j)), 1e-6);
    }
  }
}

TEST(Objectives, LogisticStronglyMonotone) {
  obm::rng g(3);
  const double reg = 0.005;
  const objective f = objective::logistic(reg);
  for (int trial = 0; trial < 500; ++trial) {
    const int d = 1 + static_cast<int>(g.uniform_index(5));
    vector t1(d), t2(d);
    for (int j = 0; j < d; ++j) {
      t1[j] = 3 * g.normal();
      t2[j] = 3 * g.normal();
    }
    const sample s = random_sample(g, d, true);
    const double lhs = (f.gradient(t1, s) - f.gradient(t2, s)).dot(t1 - t2);
    EXPECT_GE(lhs, reg * (t1 - t2).squaredNorm() * (1 - 1e-12));
  }
}

TEST(Objectives, SigmoidIsStableAtExtremes) {
  EXPECT_EQ(obm::sigmoid(-1000.0), 0.0);
  EXPECT_EQ(obm::sigmoid(1000.0), 1.0);
  const objective f = objective::logistic(0.0);
  EXPECT_TRUE(std::isfinite(f.loss(vec({100}), {vec({-50}), 1.0})));
}

}  // namespace
