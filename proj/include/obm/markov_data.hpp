#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <string_view>
#include <vector>

#include "obm/error.hpp"
#include "obm/linalg.hpp"
#include "obm/objectives.hpp"
#include "obm/random.hpp"

namespace obm {

/// How y is attached to a feature vector u.
///   regression: y = u'theta_r + N(0, sigma^2)
///   bernoulli:  y = +1 with probability 1 / (1 + exp(-u'theta_r)), else -1
enum class label_mode { regression, bernoulli };

inline label_mode label_mode_for(const objective& obj) {
  return obj.is_classification() ? label_mode::bernoulli : label_mode::regression;
}

namespace detail {
inline double draw_label(rng& g, label_mode mode, const vector& u,
                         const vector& theta_r, double sigma) {
  const double m = u.dot(theta_r);
  if (mode == label_mode::regression) return m + sigma * g.normal();
  return g.bernoulli(sigmoid(m)) ? 1.0 : -1.0;
}
}  // namespace detail

/// Independent Gaussian design. Ignores the current iterate.
class iid_stream {
 public:
  iid_stream(vector theta_r, double sigma, label_mode mode, std::uint64_t seed)
      : theta_r_(std::move(theta_r)), sigma_(sigma), mode_(mode), rng_(seed) {
    if (!(sigma > 0.0) || !std::isfinite(sigma))
      throw config_error("iid_stream: sigma must be positive and finite");
    if (theta_r_.size() == 0) throw config_error("iid_stream: empty theta_r");
    current_.u.resize(theta_r_.size());
  }

  Eigen::Index dim() const { return theta_r_.size(); }

  const sample& next(const vector& theta) {
    require_dim(theta.size(), dim(), "iid_stream: theta");
    for (Eigen::Index j = 0; j < dim(); ++j) current_.u[j] = sigma_ * rng_.normal();
    current_.y = detail::draw_label(rng_, mode_, current_.u, theta_r_, sigma_);
    return current_;
  }

  void reset() {}

 private:
  vector theta_r_;
  double sigma_;
  label_mode mode_;
  rng rng_;
  sample current_;
};

struct ar_chain_params {
  double rho = 0.5;
  double eps = 0.5;
  double sigma = 1.0;
  vector theta_r;

  void validate() const {
    if (!(rho > 0.0 && rho < 1.0)) throw config_error("ar chain: rho must lie in (0, 1)");
    if (!(sigma > 0.0) || !std::isfinite(sigma))
      throw config_error("ar chain: sigma must be positive and finite");
    if (!std::isfinite(eps)) throw config_error("ar chain: eps must be finite");
    if (theta_r.size() == 0) throw config_error("ar chain: empty theta_r");
  }
};

/// Iterate-dependent AR(1) feature chain
///   u_k = (1 - rho) u_{k-1} + rho v_k + rho eps theta_{k-1} vt_k
/// with v_k ~ N(0, sigma^2 I), vt_k ~ N(0, sigma^2) a scalar. eps = 0 gives
/// the state-independent chain through the same code path, including the
/// same draw order.
class markov_stream {
 public:
  markov_stream(ar_chain_params p, label_mode mode, std::uint64_t seed)
      : p_(std::move(p)), mode_(mode), rng_(seed) {
    p_.validate();
    current_.u.resize(p_.theta_r.size());
    noise_.resize(p_.theta_r.size());
    draw_initial();
  }

  Eigen::Index dim() const { return p_.theta_r.size(); }
  const ar_chain_params& params() const { return p_; }
  const vector& previous_features() const { return current_.u; }

  const sample& next(const vector& theta) {
    require_dim(theta.size(), dim(), "markov_stream: theta");
    if (!theta.allFinite()) throw numerical_error("markov_stream: non-finite theta");
    for (Eigen::Index j = 0; j < dim(); ++j) noise_[j] = p_.sigma * rng_.normal();
    const double vt = p_.sigma * rng_.normal();
    current_.u *= (1.0 - p_.rho);
    current_.u.noalias() += p_.rho * noise_;
    if (p_.eps != 0.0) current_.u.noalias() += (p_.rho * p_.eps * vt) * theta;
    current_.y = detail::draw_label(rng_, mode_, current_.u, p_.theta_r, p_.sigma);
    return current_;
  }

  /// Redraws u_0 from N(0, sigma^2 I); the generator keeps running.
  void reset() { draw_initial(); }

 private:
  void draw_initial() {
    for (Eigen::Index j = 0; j < dim(); ++j) current_.u[j] = p_.sigma * rng_.normal();
    current_.y = 0.0;
  }

  ar_chain_params p_;
  label_mode mode_;
  rng rng_;
  sample current_;
  vector noise_;
};

/// Strategic agents that move their modifiable features by gradient ascent on
/// u'theta - |u_S - u0_S|^2 / (2 lambda).
class agent_population {
 public:
  agent_population(matrix base_features, std::vector<bool> modifiable,
                   std::vector<double> labels, double alpha, double lambda,
                   std::size_t n1, std::uint64_t seed)
      : base_(std::move(base_features)),
        features_(base_),
        modifiable_(std::move(modifiable)),
        labels_(std::move(labels)),
        alpha_(alpha),
        lambda_(lambda),
        n1_(n1),
        rng_(seed) {
    const auto m = static_cast<std::size_t>(base_.rows());
    if (m == 0) throw config_error("agent_population: no agents");
    if (labels_.size() != m) throw config_error("agent_population: label count mismatch");
    if (modifiable_.size() != static_cast<std::size_t>(base_.cols()))
      throw config_error("agent_population: modifiable mask has wrong length");
    if (n1_ < 1 || n1_ > m)
      throw config_error("agent_population: n1 must satisfy 1 <= n1 <= number of agents");
    if (!(alpha_ > 0.0) || !(lambda_ > 0.0))
      throw config_error("agent_population: alpha and lambda must be positive");
    for (double y : labels_)
      if (y != 1.0 && y != -1.0) throw config_error("agent_population: labels must be +/-1");
    if (!base_.allFinite()) throw config_error("agent_population: non-finite features");
    for (Eigen::Index j = 0; j < base_.cols(); ++j)
      if (modifiable_[static_cast<std::size_t>(j)]) mod_cols_.push_back(j);
    order_.resize(m);
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    current_.u.resize(base_.cols());
  }

  Eigen::Index dim() const { return base_.cols(); }
  std::size_t size() const { return static_cast<std::size_t>(base_.rows()); }
  const matrix& features() const { return features_; }
  const matrix& base_features() const { return base_; }
  const std::vector<bool>& modifiable() const { return modifiable_; }
  const std::vector<double>& labels() const { return labels_; }
  double alpha() const { return alpha_; }
  double lambda() const { return lambda_; }
  std::size_t n1() const { return n1_; }

  /// Moves n1 uniformly chosen agents one ascent step toward their best
  /// response to theta.
  void respond(const vector& theta) {
    require_dim(theta.size(), dim(), "agent_population: theta");
    if (!theta.allFinite()) throw numerical_error("agent_population: non-finite theta");
    const std::size_t m = size();
    if (n1_ == m) {
      for (std::size_t i = 0; i < m; ++i) step_agent(static_cast<Eigen::Index>(i), theta);
      return;
    }
    // partial Fisher-Yates: the first n1 slots of order_ become the chosen set
    for (std::size_t i = 0; i < n1_; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng_.uniform_index(m - i));
      std::swap(order_[i], order_[j]);
      step_agent(static_cast<Eigen::Index>(order_[i]), theta);
    }
  }

  /// One round of the data stream: agents respond, then one uniformly chosen
  /// agent's current (u, y) is reported.
  const sample& next(const vector& theta) {
    respond(theta);
    const auto i = static_cast<Eigen::Index>(rng_.uniform_index(size()));
    current_.u = features_.row(i).transpose();
    current_.y = labels_[static_cast<std::size_t>(i)];
    return current_;
  }

  /// Agents return to their undistorted features.
  void reset() { features_ = base_; }

 private:
  void step_agent(Eigen::Index i, const vector& theta) {
    for (Eigen::Index j : mod_cols_) {
      const double drift = theta[j] - (features_(i, j) - base_(i, j)) / lambda_;
      features_(i, j) += alpha_ * drift;
    }
  }

  matrix base_;
  matrix features_;
  std::vector<bool> modifiable_;
  std::vector<double> labels_;
  double alpha_;
  double lambda_;
  std::size_t n1_;
  rng rng_;
  std::vector<Eigen::Index> mod_cols_;
  std::vector<std::size_t> order_;
  sample current_;
};

}  // namespace obm
