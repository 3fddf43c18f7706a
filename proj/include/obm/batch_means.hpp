#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "obm/error.hpp"
#include "obm/linalg.hpp"

namespace obm {

/// How iterates before a_1 are handled when floor(C * 1^beta) > 1.
///   leading: iterates 1 .. a_1 - 1 form one growing block starting at 1
///   one:     a_1 is replaced by 1, later a_m unchanged
///   strict:  no block exists before a_1; such iterations are an error
enum class first_block { leading, one, strict };

inline first_block parse_first_block(std::string_view s) {
  if (s == "leading") return first_block::leading;
  if (s == "one") return first_block::one;
  if (s == "strict") return first_block::strict;
  throw config_error("unknown first_block mode '" + std::string(s) + "'");
}

inline std::string to_string(first_block f) {
  switch (f) {
    case first_block::leading: return "leading";
    case first_block::one: return "one";
    default: return "strict";
  }
}

struct block {
  std::uint64_t start;   // t_k
  std::uint64_t length;  // l_k = k - t_k + 1
};

/// Block restarts a_m = floor(C m^beta), forced strictly increasing by
/// a_m <- max(a_m, a_{m-1} + 1). Extended lazily; never needs the horizon.
class batch_schedule {
 public:
  batch_schedule(double c = 2.0, double beta = 2.0 / (1.0 - 0.5005),
                 first_block mode = first_block::leading)
      : c_(c), beta_(beta), mode_(mode) {
    if (!(c > 0.0) || !std::isfinite(c)) throw config_error("batch_schedule: C must be positive");
    if (!(beta > 1.0) || !std::isfinite(beta))
      throw config_error("batch_schedule: beta must be finite and > 1");
    const std::uint64_t a1 = raw(1);
    if (a1 > 1 && mode_ == first_block::leading) starts_.push_back(1);
    if (mode_ == first_block::one) {
      starts_.push_back(1);
      a_.push_back(1);
    } else {
      starts_.push_back(a1);
      a_.push_back(a1);
    }
  }

  double c() const { return c_; }
  double beta() const { return beta_; }
  first_block mode() const { return mode_; }

  /// a_m for m >= 1, after the strict-increase fix-up.
  std::uint64_t a(std::size_t m) const {
    if (m == 0) throw std::out_of_range("batch_schedule: m starts at 1");
    while (a_.size() < m) extend();
    return a_[m - 1];
  }

  /// First iteration that has a block.
  std::uint64_t first_start() const { return starts_.front(); }

  /// i-th block restart (0-based), including the leading block if any.
  std::uint64_t start(std::size_t i) const {
    while (starts_.size() <= i) extend();
    return starts_[i];
  }

  block block_of(std::uint64_t k) const {
    if (k < first_start())
      throw std::out_of_range("batch_schedule: iteration " + std::to_string(k) +
                              " precedes the first block start " +
                              std::to_string(first_start()));
    while (starts_.back() <= k) extend();
    // last start <= k
    const auto it = std::upper_bound(starts_.begin(), starts_.end(), k);
    const std::uint64_t t = *(it - 1);
    return {t, k - t + 1};
  }

 private:
  std::uint64_t raw(std::size_t m) const {
    const double v = std::floor(c_ * std::pow(static_cast<double>(m), beta_));
    if (!(v < 9.0e18)) throw std::overflow_error("batch_schedule: a_m exceeds 64-bit range");
    return std::max<std::uint64_t>(static_cast<std::uint64_t>(v), 1);
  }

  void extend() const {
    const std::uint64_t next = std::max(raw(a_.size() + 1), a_.back() + 1);
    a_.push_back(next);
    starts_.push_back(next);
  }

  double c_;
  double beta_;
  first_block mode_;
  mutable std::vector<std::uint64_t> a_;
  mutable std::vector<std::uint64_t> starts_;
};

/// (t_k, l_k) for iteration k.
inline block schedule_block(const batch_schedule& s, std::uint64_t k) { return s.block_of(k); }

struct covariance_estimate {
  matrix sigma_hat;
  std::uint64_t n = 0;
};

/// Whether iterates are accumulated relative to the first one. The estimator
/// is shift invariant, so this changes only the rounding: sums stay small
/// when the iterates hover around a point far from the origin.
enum class centering { first_iterate, none };

/// Online overlapping batch-means estimator. With S_i the sum of the block
/// ending at i and l_i its length,
///
///   Sigma_n = sum_i (S_i - l_i mean)(S_i - l_i mean)' / sum_i l_i
///           = (V - w mean' - mean w' + q mean mean') / L
///
/// where V = sum S_i S_i', w = sum l_i S_i, q = sum l_i^2, L = sum l_i.
/// Each update costs O(d^2); no iterate history is kept.
class obm_accumulator {
 public:
  obm_accumulator(Eigen::Index d, batch_schedule schedule,
                  centering c = centering::first_iterate)
      : d_(d), schedule_(std::move(schedule)), centering_(c) {
    if (d < 1) throw config_error("obm_accumulator: dimension must be >= 1");
    reset();
  }

  void reset() {
    n_ = 0;
    L_ = 0;
    q_ = 0;
    block_idx_ = 0;
    block_start_ = 0;
    next_start_ = schedule_.start(0);
    anchor_ = vector::Zero(d_);
    x_ = vector::Zero(d_);
    P_ = vector::Zero(d_);
    T_ = vector::Zero(d_);
    Tc_ = vector::Zero(d_);
    w_ = vector::Zero(d_);
    wc_ = vector::Zero(d_);
    V_ = matrix::Zero(d_, d_);
    Vc_ = matrix::Zero(d_, d_);
  }

  void update(const vector& theta) {
    require_dim(theta.size(), d_, "obm_accumulator: iterate");
    if (!theta.allFinite())
      throw numerical_error("obm_accumulator: non-finite iterate at k = " + std::to_string(n_ + 1));
    const std::uint64_t k = n_ + 1;
    if (k == next_start_) {
      P_.setZero();
      block_start_ = k;
      next_start_ = schedule_.start(++block_idx_);
    } else if (block_start_ == 0) {
      throw std::out_of_range("obm_accumulator: iteration " + std::to_string(k) +
                              " precedes the first block start " +
                              std::to_string(schedule_.first_start()));
    }
    if (k == 1 && centering_ == centering::first_iterate) anchor_ = theta;
    x_ = theta - anchor_;
    const std::uint64_t l = k - block_start_ + 1;
    const double ld = static_cast<double>(l);

    P_ += x_;
    kahan_add(T_, Tc_, x_);
    for (Eigen::Index j = 0; j < d_; ++j) {
      for (Eigen::Index i = j; i < d_; ++i) kahan_add(V_(i, j), Vc_(i, j), P_[i] * P_[j]);
      kahan_add(w_[j], wc_[j], ld * P_[j]);
    }
    q_ += static_cast<unsigned __int128>(l) * l;
    L_ += l;
    n_ = k;
  }

  covariance_estimate finalize() const {
    if (n_ == 0) throw std::logic_error("obm_accumulator: finalize before any update");
    const vector m = T_ / static_cast<double>(n_);
    const double q = static_cast<double>(q_);
    matrix V = V_.selfadjointView<Eigen::Lower>();
    matrix s = V - w_ * m.transpose() - m * w_.transpose() + q * (m * m.transpose());
    s /= static_cast<double>(L_);
    matrix sym = 0.5 * (s + s.transpose());
    return {std::move(sym), n_};
  }

  /// Running Polyak average of the iterates fed so far.
  vector mean() const {
    if (n_ == 0) return vector::Zero(d_);
    return anchor_ + T_ / static_cast<double>(n_);
  }

  std::uint64_t count() const { return n_; }
  Eigen::Index dim() const { return d_; }
  const batch_schedule& schedule() const { return schedule_; }

  // Raw running sums (relative to the anchor when centering is on).
  const vector& block_sum() const { return P_; }
  const vector& total() const { return T_; }
  matrix outer_sum() const { return V_.selfadjointView<Eigen::Lower>(); }
  const vector& weighted_sum() const { return w_; }
  double length_sq_sum() const { return static_cast<double>(q_); }
  std::uint64_t length_sum() const { return L_; }

 private:
  static void kahan_add(double& sum, double& comp, double x) {
    const double y = x - comp;
    const double t = sum + y;
    comp = (t - sum) - y;
    sum = t;
  }
  static void kahan_add(vector& sum, vector& comp, const vector& x) {
    for (Eigen::Index i = 0; i < sum.size(); ++i) kahan_add(sum[i], comp[i], x[i]);
  }

  Eigen::Index d_;
  batch_schedule schedule_;
  centering centering_;
  std::uint64_t n_ = 0;
  std::uint64_t L_ = 0;
  unsigned __int128 q_ = 0;
  std::size_t block_idx_ = 0;
  std::uint64_t block_start_ = 0;
  std::uint64_t next_start_ = 0;
  vector anchor_, x_, P_, T_, Tc_, w_, wc_;
  matrix V_, Vc_;
};

/// Direct evaluation of the batch-means formula over a stored sequence.
/// Quadratic in the block lengths; intended as a test oracle.
inline covariance_estimate brute_force_sigma(const std::vector<vector>& iterates,
                                             const batch_schedule& sched) {
  if (iterates.empty()) throw std::invalid_argument("brute_force_sigma: empty sequence");
  const Eigen::Index d = iterates.front().size();
  const std::size_t n = iterates.size();
  vector mean = vector::Zero(d);
  for (const auto& t : iterates) mean += t;
  mean /= static_cast<double>(n);

  matrix num = matrix::Zero(d, d);
  double den = 0.0;
  for (std::size_t i = 1; i <= n; ++i) {
    const block b = sched.block_of(i);
    vector s = vector::Zero(d);
    for (std::uint64_t k = b.start; k <= i; ++k) s += iterates[k - 1];
    const vector dev = s - static_cast<double>(b.length) * mean;
    num += dev * dev.transpose();
    den += static_cast<double>(b.length);
  }
  return {num / den, n};
}

}  // namespace obm
