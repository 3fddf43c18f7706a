#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "obm/markov_data.hpp"
#include "obm/sgd_engine.hpp"

namespace {

using obm::iterate_state;
using obm::step_schedule;
using obm::truncation_schedule;
using obm::vector;

vector vec(std::initializer_list<double> xs) {
  vector v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v[i++] = x;
  return v;
}

// Every observation has u = 0, so the squared-loss gradient vanishes.
struct silent_stream {
  Eigen::Index d;
  obm::sample s;
  int resets = 0;
  explicit silent_stream(Eigen::Index dim) : d(dim) {
    s.u = vector::Zero(dim);
    s.y = 0.0;
  }
  Eigen::Index dim() const { return d; }
  const obm::sample& next(const vector&) { return s; }
  void reset() { ++resets; }
};

// Counts resets while forwarding to an iid stream.
struct counting_stream {
  obm::iid_stream inner;
  int resets = 0;
  Eigen::Index dim() const { return inner.dim(); }
  const obm::sample& next(const vector& t) { return inner.next(t); }
  void reset() {
    ++resets;
    inner.reset();
  }
};

TEST(Schedules, Invariants) {
  const step_schedule eta(2.0, 0.5005);
  const truncation_schedule tr(10.0, 0.3, 10.0, 2.0);
  for (std::uint64_t k = 1; k < 1000; ++k) {
    EXPECT_GT(eta(k), eta(k + 1));
    EXPECT_GT(tr.threshold(k), tr.threshold(k + 1));
  }
  for (std::uint64_t q = 0; q < 20; ++q) EXPECT_LT(tr.radius(q), tr.radius(q + 1));
  EXPECT_DOUBLE_EQ(eta(1), 2.0);
  EXPECT_DOUBLE_EQ(tr.threshold(1), 10.0);
  EXPECT_THROW(step_schedule(2.0, 0.5), obm::config_error);
  EXPECT_THROW(step_schedule(2.0, 1.0), obm::config_error);
  EXPECT_THROW(step_schedule(0.0, 0.6), obm::config_error);
  EXPECT_THROW(truncation_schedule(10.0, 0.375), obm::config_error);
  EXPECT_THROW(truncation_schedule(10.0, 0.3, 10.0, 1.0), obm::config_error);
}

TEST(SgdStep, ExplicitUpdate) {
  auto r = obm::sgd_step(iterate_state::at(vec({0, 0})), vec({1, -1}), step_schedule(2.0, 0.5005),
                         truncation_schedule());
  EXPECT_FALSE(r.reset);
  EXPECT_EQ(r.state.theta, vec({-2, 2}));
  EXPECT_EQ(r.state.k, 1u);
  EXPECT_EQ(r.state.kappa, 0u);
}

TEST(SgdStep, ZeroGradientIsFixedPoint) {
  iterate_state s = iterate_state::at(vec({0.3, -4.0}));
  s.k = 57;
  auto r = obm::sgd_step(s, vec({0, 0}), step_schedule(), truncation_schedule());
  EXPECT_FALSE(r.reset);
  EXPECT_EQ(r.state.theta, s.theta);
}

TEST(SgdStep, LeavingTheBallResets) {
  iterate_state s = iterate_state::at(vec({0.0}));
  s.theta = vec({9.9});
  const truncation_schedule tr(10.0, 0.3, 10.0, 2.0);
  // eta_1 = 1, candidate 9.9 + 0.6 = 10.5 lies outside K_0
  auto r = obm::sgd_step(s, vec({-0.6}), step_schedule(1.0, 0.6), tr);
  EXPECT_TRUE(r.reset);
  EXPECT_EQ(r.state.theta, vec({0.0}));
  EXPECT_EQ(r.state.kappa, 1u);
  EXPECT_DOUBLE_EQ(tr.radius(r.state.kappa), 20.0);
}

TEST(SgdStep, LargeMoveResets) {
  iterate_state s = iterate_state::at(vec({1.0, 1.0}));
  // |eta_1 g| = 10 >= d_1 = 10
  auto r = obm::sgd_step(s, vec({5.0, 0.0}), step_schedule(2.0, 0.6), truncation_schedule());
  EXPECT_TRUE(r.reset);
  EXPECT_EQ(r.state.theta, vec({1.0, 1.0}));
}

TEST(SgdStep, Errors) {
  const auto s = iterate_state::at(vec({0, 0}));
  EXPECT_THROW(obm::sgd_step(s, vec({1, 2, 3}), step_schedule(), truncation_schedule()),
               std::invalid_argument);
  try {
    iterate_state t = s;
    t.k = 41;
    obm::sgd_step(t, vec({1, std::numeric_limits<double>::infinity()}), step_schedule(),
                  truncation_schedule());
    FAIL();
  } catch (const obm::numerical_error& e) {
    EXPECT_NE(std::string(e.what()).find("iteration 42"), std::string::npos);
  }
}

TEST(Run, SingleStepAverage) {
  obm::iid_stream s(vec({1, 2}), 1.0, obm::label_mode::regression, 3);
  const std::uint64_t cp[] = {1};
  obm::run_options o;
  o.record_iterates = true;
  const auto t = obm::run(obm::objective::linear(), s, step_schedule(0.1, 0.6),
                          truncation_schedule(), 1, cp, obm::batch_schedule(), o);
  EXPECT_EQ(t.theta_bar, t.iterates[0]);
  EXPECT_EQ(t.snapshots.size(), 1u);
  EXPECT_TRUE(t.snapshots[0].sigma.sigma_hat.isZero(0));
}

TEST(Run, ZeroGradientStream) {
  silent_stream s(3);
  obm::run_options o;
  o.theta0 = vec({1, 2, 3});
  const auto t = obm::run(obm::objective::linear(), s, step_schedule(), truncation_schedule(), 500,
                          {}, obm::batch_schedule(), o);
  EXPECT_EQ(t.theta_bar, o.theta0);
  EXPECT_EQ(t.n_truncations, 0u);
  EXPECT_EQ(s.resets, 0);
}

TEST(Run, IidLinearRegressionConverges) {
  const vector theta_star = vec({1.0, -0.5});
  int close = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    obm::iid_stream s(theta_star, 1.0, obm::label_mode::regression, seed);
    const auto t = obm::run(obm::objective::linear(), s, step_schedule(), truncation_schedule(),
                            100000, {}, obm::batch_schedule());
    if ((t.theta_bar - theta_star).norm() < 0.05) ++close;
  }
  EXPECT_GE(close, 95);
}

TEST(Run, TraceInvariants) {
  const step_schedule eta;
  const truncation_schedule tr;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    counting_stream s{obm::iid_stream(vec({1, 1}), 1.0, obm::label_mode::regression, seed)};
    obm::run_options o;
    o.record_iterates = true;
    const auto t = obm::run(obm::objective::linear(), s, eta, tr, 2000, {}, obm::batch_schedule(), o);
    EXPECT_EQ(static_cast<std::uint64_t>(s.resets), t.n_truncations);
    EXPECT_EQ(t.resets_at.size(), t.n_truncations);
    std::uint64_t kappa = 0;
    std::size_t next_reset = 0;
    vector prev = vector::Zero(2);
    for (std::uint64_t k = 1; k <= t.iterates.size(); ++k) {
      const vector& cur = t.iterates[k - 1];
      if (next_reset < t.resets_at.size() && t.resets_at[next_reset] == k) {
        ++kappa;
        ++next_reset;
        EXPECT_EQ(cur, vector::Zero(2));
      } else {
        EXPECT_LT((cur - prev).norm(), tr.threshold(k));
        EXPECT_LE(cur.norm(), tr.radius(kappa));
      }
      prev = cur;
    }
    EXPECT_EQ(kappa, t.n_truncations);
  }
}

TEST(Run, DisabledTruncationIsVanillaSgd) {
  const auto obj = obm::objective::linear();
  const step_schedule eta(0.5, 0.6);
  obm::markov_stream a({0.5, 0.5, 1.0, vec({1, -1})}, obm::label_mode::regression, 99);
  obm::run_options o;
  o.record_iterates = true;
  const auto t = obm::run(obj, a, eta, truncation_schedule::disabled(), 3000, {},
                          obm::batch_schedule(), o);
  EXPECT_EQ(t.n_truncations, 0u);

  obm::markov_stream b({0.5, 0.5, 1.0, vec({1, -1})}, obm::label_mode::regression, 99);
  vector theta = vector::Zero(2), g(2), step(2);
  for (std::uint64_t k = 1; k <= 3000; ++k) {
    const auto& x = b.next(theta);
    obj.gradient(theta, x, g);
    step.noalias() = eta(k) * g;
    theta -= step;
    ASSERT_EQ(theta, t.iterates[k - 1]) << "k = " << k;
  }
}

TEST(Run, RunningAverageMatchesDirectMean) {
  obm::markov_stream s({0.5, 0.5, 1.0, vec({2, 1, -1})}, obm::label_mode::regression, 5);
  obm::run_options o;
  o.record_iterates = true;
  const auto t = obm::run(obm::objective::linear(), s, step_schedule(), truncation_schedule(), 10000,
                          {}, obm::batch_schedule(), o);
  ASSERT_EQ(t.n_truncations, 0u);
  vector direct = vector::Zero(3);
  for (const auto& x : t.iterates) direct += x;
  direct /= 10000.0;
  EXPECT_LE((t.theta_bar - direct).norm(), 1e-12 * direct.norm());
}

TEST(Run, BurnInExcludesEarlyIterates) {
  obm::iid_stream s(vec({1, 2}), 1.0, obm::label_mode::regression, 8);
  obm::run_options o;
  o.record_iterates = true;
  o.burn_in = 100;
  const auto t = obm::run(obm::objective::linear(), s, step_schedule(0.2, 0.6), truncation_schedule(),
                          400, {}, obm::batch_schedule(), o);
  ASSERT_EQ(t.n_truncations, 0u);
  EXPECT_EQ(t.n_averaged, 300u);
  vector direct = vector::Zero(2);
  for (std::size_t k = 100; k < 400; ++k) direct += t.iterates[k];
  EXPECT_LE((t.theta_bar - direct / 300.0).norm(), 1e-12);
}

TEST(Run, RejectsBadArguments) {
  silent_stream s(2);
  const std::uint64_t bad[] = {5, 3};
  EXPECT_THROW(obm::run(obm::objective::linear(), s, step_schedule(), truncation_schedule(), 10, bad,
                        obm::batch_schedule()),
               obm::config_error);
  EXPECT_THROW(obm::run(obm::objective::linear(), s, step_schedule(), truncation_schedule(), 0, {},
                        obm::batch_schedule()),
               obm::config_error);
  obm::run_options o;
  o.theta0 = vec({20, 0});
  EXPECT_THROW(obm::run(obm::objective::linear(), s, step_schedule(), truncation_schedule(), 10, {},
                        obm::batch_schedule(), o),
               obm::config_error);
}

}  // namespace
