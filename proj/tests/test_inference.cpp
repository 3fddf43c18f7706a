#include <gtest/gtest.h>

#include <algorithm>
#include <vector>

#include "obm/inference.hpp"
#include "obm/random.hpp"

namespace {

using obm::matrix;
using obm::vector;

TEST(NormalQuantile, RoundTrip) {
  for (double p : {0.5, 0.9, 0.95, 0.975, 0.995, 1e-8, 0.01, 0.3, 0.999999})
    EXPECT_LE(std::abs(obm::normal_cdf(obm::normal_quantile(p)) - p), 1e-10) << p;
}

TEST(NormalQuantile, KnownValues) {
  EXPECT_EQ(obm::normal_quantile(0.5), 0.0);
  EXPECT_NEAR(obm::normal_quantile(0.975), 1.959963984540054, 1e-12);
  EXPECT_NEAR(obm::normal_quantile(0.025), -1.959963984540054, 1e-12);
  EXPECT_THROW(obm::normal_quantile(0.0), std::domain_error);
  EXPECT_THROW(obm::normal_quantile(1.0), std::domain_error);
}

TEST(ConfidenceInterval, UnitExample) {
  const auto c = obm::ci(vector::Zero(1), matrix::Identity(1, 1), vector::Ones(1), 100, 0.95);
  EXPECT_NEAR(c.lo, -0.19600, 1e-4);
  EXPECT_NEAR(c.hi, 0.19600, 1e-4);
  EXPECT_EQ(c.k, 100u);
}

TEST(ConfidenceInterval, DegenerateAndHomogeneous) {
  vector theta(2);
  theta << 0.4, -1.0;
  const auto z = obm::ci(theta, matrix::Zero(2, 2), vector::Ones(2), 10);
  EXPECT_EQ(z.lo, z.hi);
  EXPECT_DOUBLE_EQ(z.lo, -0.6);

  matrix s(2, 2);
  s << 2.0, 0.3, 0.3, 1.0;
  const vector v = vector::Ones(2);
  const auto c1 = obm::ci(theta, s, v, 50);
  const auto c2 = obm::ci(theta, s, 2.0 * v, 50);
  EXPECT_NEAR(c2.center(), 2 * c1.center(), 1e-14);
  EXPECT_NEAR(c2.width(), 2 * c1.width(), 1e-14);
}

TEST(ConfidenceInterval, WidthShrinksWithK) {
  matrix s(2, 2);
  s << 1.0, 0.2, 0.2, 0.5;
  double prev = 1e300;
  for (std::uint64_t k : {1, 2, 10, 100, 1000, 100000}) {
    const double w = obm::ci(vector::Zero(2), s, vector::Ones(2), k).width();
    EXPECT_LT(w, prev);
    prev = w;
  }
}

TEST(ConfidenceInterval, NegativeVariance) {
  matrix s(2, 2);
  s << 1.0, 0.0, 0.0, 1.0;
  vector v(2);
  v << 1.0, 0.0;
  // clamped: v'Sv slightly below zero relative to the trace
  matrix near = s;
  near(0, 0) = -1e-12;
  EXPECT_EQ(obm::ci(vector::Zero(2), near, v, 10).width(), 0.0);
  matrix broken = s;
  broken(0, 0) = -0.5;
  EXPECT_THROW(obm::ci(vector::Zero(2), broken, v, 10), obm::numerical_error);
  EXPECT_THROW(obm::ci(vector::Zero(2), s, v, 10, 1.0), std::domain_error);
  EXPECT_THROW(obm::ci(vector::Zero(2), s, vector::Ones(3), 10), std::invalid_argument);
}

TEST(Mis, WorkedExamples) {
  const double inside[] = {0.5};
  EXPECT_EQ(obm::mis_sample(0, 1, 0.05, inside).mis, 1.0);
  const double above[] = {1.5};
  EXPECT_EQ(obm::mis_sample(0, 1, 0.05, above).mis, 21.0);
  const double mixed[] = {-0.25, 0.5};
  EXPECT_EQ(obm::mis_sample(0, 1, 0.05, mixed).mis, 6.0);
}

TEST(Mis, Properties) {
  obm::rng g(1);
  std::vector<double> z(50);
  for (auto& x : z) x = 3 * g.normal();
  const double m = obm::mis_sample(-1, 2, 0.1, z).mis;
  std::reverse(z.begin(), z.end());
  EXPECT_NEAR(obm::mis_sample(-1, 2, 0.1, z).mis, m, 1e-12);
  std::vector<double> in(20, 0.3);
  EXPECT_EQ(obm::mis_sample(-1, 2, 0.1, in).mis, 3.0);
  EXPECT_GE(m, 3.0);
  const double none[] = {0.0};
  EXPECT_THROW(obm::mis_sample(0, 1, 1.5, none), std::domain_error);
  EXPECT_THROW(obm::mis_sample(0, 1, 0.05, std::span<const double>{}), std::invalid_argument);
}

TEST(Coverage, Basics) {
  std::vector<obm::confidence_interval> all(10, {-1.0, 1.0, 0.95, 1});
  EXPECT_EQ(obm::coverage(all, 0.0), 1.0);
  EXPECT_EQ(obm::coverage(all, 1.0), 1.0);  // closed interval
  EXPECT_EQ(obm::coverage(all, 1.0000001), 0.0);
  all[0] = {2.0, 3.0, 0.95, 1};
  EXPECT_DOUBLE_EQ(obm::coverage(all, 0.0), 0.9);
  EXPECT_THROW(obm::coverage(std::span<const obm::confidence_interval>{}, 0.0), std::invalid_argument);
}

}  // namespace
