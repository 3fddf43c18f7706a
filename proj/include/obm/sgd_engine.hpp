#pragma once

#include <concepts>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "obm/batch_means.hpp"
#include "obm/error.hpp"
#include "obm/linalg.hpp"
#include "obm/objectives.hpp"
#include "obm/schedules.hpp"

namespace obm {

/// A data source whose next observation may depend on the current iterate.
template <typename S>
concept data_stream = requires(S s, const vector& theta) {
  { s.next(theta) } -> std::convertible_to<const sample&>;
  s.reset();
  { s.dim() } -> std::convertible_to<Eigen::Index>;
};

template <typename E>
concept covariance_estimator = requires(E e, const E ce, const vector& theta) {
  e.update(theta);
  e.reset();
  { ce.finalize() } -> std::convertible_to<covariance_estimate>;
  { ce.count() } -> std::convertible_to<std::uint64_t>;
};

struct iterate_state {
  vector theta;
  vector theta_init;
  std::uint64_t kappa = 0;  // truncations so far; K_kappa is the active set
  std::uint64_t k = 0;      // steps taken

  static iterate_state at(vector theta0) {
    iterate_state s;
    s.theta = theta0;
    s.theta_init = std::move(theta0);
    return s;
  }
};

struct step_result {
  iterate_state state;
  bool reset = false;
};

/// In-place truncated step k -> k+1. Returns true when the candidate was
/// rejected and the state was sent back to theta_init with kappa + 1; the
/// caller then owes the stream a reset.
inline bool advance(iterate_state& s, const vector& grad, const step_schedule& eta,
                    const truncation_schedule& trunc, vector& scratch) {
  require_dim(grad.size(), s.theta.size(), "sgd_step: gradient");
  const std::uint64_t next = s.k + 1;
  if (!grad.allFinite())
    throw numerical_error("sgd_step: non-finite gradient at iteration " + std::to_string(next));

  scratch.noalias() = eta(next) * grad;  // theta_{k+1} - theta_k = -scratch
  const double move = scratch.norm();
  s.k = next;
  const bool too_far = move >= trunc.threshold(next);
  bool outside = false;
  if (!too_far) {
    s.theta -= scratch;
    outside = s.theta.norm() > trunc.radius(s.kappa);
  }
  if (too_far || outside) {
    s.theta = s.theta_init;
    ++s.kappa;
    return true;
  }
  return false;
}

/// Value form of advance().
inline step_result sgd_step(iterate_state state, const vector& grad, const step_schedule& eta,
                            const truncation_schedule& trunc) {
  vector scratch(state.theta.size());
  const bool reset = advance(state, grad, eta, trunc, scratch);
  return {std::move(state), reset};
}

struct run_options {
  vector theta0;                 // empty: origin
  std::uint64_t burn_in = 0;     // iterates k <= burn_in are not averaged
  bool record_iterates = false;  // keep theta_1..theta_n in the trace
};

struct snapshot {
  std::uint64_t k = 0;
  vector theta_bar;
  covariance_estimate sigma;
  std::uint64_t n_truncations = 0;
};

struct run_trace {
  vector theta_bar;
  vector theta_last;
  std::uint64_t n_truncations = 0;
  std::uint64_t n_averaged = 0;
  std::vector<snapshot> snapshots;
  std::vector<vector> iterates;           // only with record_iterates
  std::vector<std::uint64_t> resets_at;   // iterations whose step truncated
};

/// Truncated SGD driven by a (possibly iterate-dependent) stream. Accepted
/// iterates feed the running average and the estimator. A truncation resets
/// the iterate, the stream, the average and the estimator; step sizes and
/// thresholds keep counting from the global k.
template <data_stream Stream, covariance_estimator Estimator>
run_trace run(const objective& obj, Stream& stream, const step_schedule& eta,
              const truncation_schedule& trunc, std::uint64_t n,
              std::span<const std::uint64_t> checkpoints, Estimator& estimator,
              const run_options& opts = {}) {
  if (n < 1) throw config_error("run: n must be >= 1");
  for (std::size_t i = 0; i < checkpoints.size(); ++i) {
    if (checkpoints[i] < 1 || checkpoints[i] > n)
      throw config_error("run: checkpoint " + std::to_string(checkpoints[i]) + " outside [1, n]");
    if (i > 0 && checkpoints[i] <= checkpoints[i - 1])
      throw config_error("run: checkpoints must be strictly increasing");
  }
  const Eigen::Index d = stream.dim();
  vector theta0 = opts.theta0.size() == 0 ? vector::Zero(d) : opts.theta0;
  require_dim(theta0.size(), d, "run: theta0");
  if (theta0.norm() > trunc.radius(0)) throw config_error("run: theta0 lies outside K_0");

  iterate_state state = iterate_state::at(theta0);
  run_trace trace;
  vector grad(d), scratch(d);
  vector avg = vector::Zero(d);
  std::uint64_t m = 0;
  std::size_t next_cp = 0;
  estimator.reset();

  for (std::uint64_t k = 1; k <= n; ++k) {
    const sample& x = stream.next(state.theta);
    obj.gradient(state.theta, x, grad);
    if (advance(state, grad, eta, trunc, scratch)) {
      stream.reset();
      estimator.reset();
      avg.setZero();
      m = 0;
      trace.resets_at.push_back(k);
    }
    if (opts.record_iterates) trace.iterates.push_back(state.theta);
    if (k > opts.burn_in) {
      ++m;
      avg += (state.theta - avg) / static_cast<double>(m);
      try {
        estimator.update(state.theta);
      } catch (const numerical_error& e) {
        throw numerical_error("run: estimator failed at iteration " + std::to_string(k) + ": " + e.what());
      }
    }
    if (next_cp < checkpoints.size() && checkpoints[next_cp] == k) {
      snapshot s;
      s.k = k;
      s.theta_bar = m > 0 ? avg : state.theta;
      s.sigma = m > 0 ? estimator.finalize() : covariance_estimate{matrix::Zero(d, d), 0};
      s.n_truncations = state.kappa;
      trace.snapshots.push_back(std::move(s));
      ++next_cp;
    }
  }
  trace.theta_bar = m > 0 ? avg : state.theta;
  trace.theta_last = state.theta;
  trace.n_truncations = state.kappa;
  trace.n_averaged = m;
  return trace;
}

/// Convenience overload that builds an overlapping batch-means estimator.
template <data_stream Stream>
run_trace run(const objective& obj, Stream& stream, const step_schedule& eta,
              const truncation_schedule& trunc, std::uint64_t n,
              std::span<const std::uint64_t> checkpoints, const batch_schedule& sched,
              const run_options& opts = {}) {
  obm_accumulator acc(stream.dim(), sched);
  return run(obj, stream, eta, trunc, n, checkpoints, acc, opts);
}

}  // namespace obm
