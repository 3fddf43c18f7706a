#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "obm/batch_means.hpp"
#include "obm/csv.hpp"
#include "obm/error.hpp"
#include "obm/inference.hpp"
#include "obm/linalg.hpp"
#include "obm/markov_data.hpp"
#include "obm/objectives.hpp"
#include "obm/parallel.hpp"
#include "obm/random.hpp"
#include "obm/schedules.hpp"
#include "obm/sgd_engine.hpp"

namespace obm {

using json = nlohmann::json;

enum class stream_kind { iid, ar1, state_dep, agents };

inline stream_kind parse_stream_kind(std::string_view s) {
  if (s == "iid") return stream_kind::iid;
  if (s == "ar1") return stream_kind::ar1;
  if (s == "state_dep") return stream_kind::state_dep;
  if (s == "agents") return stream_kind::agents;
  throw config_error("unknown stream kind '" + std::string(s) + "'");
}

inline std::string to_string(stream_kind k) {
  switch (k) {
    case stream_kind::iid: return "iid";
    case stream_kind::ar1: return "ar1";
    case stream_kind::state_dep: return "state_dep";
    default: return "agents";
  }
}

struct experiment_config {
  // model
  std::string objective = "linear_sq";
  double reg = 0.01;
  std::string stream = "state_dep";
  int d = 2;
  double rho = 0.5;
  double eps = 0.5;
  double sigma = 1.0;
  std::vector<double> theta_r;  // empty: all ones
  // strategic agents
  double lambda = 0.01;
  std::optional<double> alpha;  // default 0.5 * lambda
  std::size_t n1 = 10;
  std::string csv_path;
  std::string label_column = "SeriousDlqin2yrs";
  std::vector<std::string> feature_columns;
  std::vector<std::string> modifiable_columns = {"RevolvingUtilizationOfUnsecuredLines",
                                                 "NumberOfOpenCreditLinesAndLoans",
                                                 "NumberRealEstateLoansOrLines"};
  std::size_t n_agents = 9000;
  double clip_quantile = 0.01;
  // run
  std::uint64_t n_iters = 50000;
  std::size_t n_reps = 200;
  std::size_t n_truth_reps = 500;
  std::vector<std::uint64_t> checkpoints;  // empty: geometric grid
  int n_checkpoints = 10;
  std::uint64_t seed = 1;
  std::uint64_t burn_in = 0;
  // schedules
  double eta0 = 2.0;
  double a = 0.5005;
  double d0 = 10.0;
  double b = 0.3;
  double r0 = 10.0;
  double growth = 2.0;
  double C = 2.0;
  std::optional<double> beta;  // default 2 / (1 - a)
  std::string first_block = "leading";
  std::vector<double> theta0;  // empty: origin
  // inference
  std::vector<double> v;  // empty: all ones
  double level = 0.95;
  bool analytic_truth = false;
  unsigned workers = 0;

  double beta_value() const { return beta ? *beta : 2.0 / (1.0 - a); }
  double alpha_value() const { return alpha ? *alpha : 0.5 * lambda; }
};

inline json to_json(const experiment_config& c) {
  json j;
  j["objective"] = c.objective;
  j["reg"] = c.reg;
  j["stream"] = c.stream;
  j["d"] = c.d;
  j["rho"] = c.rho;
  j["eps"] = c.eps;
  j["sigma"] = c.sigma;
  j["theta_r"] = c.theta_r;
  j["lambda"] = c.lambda;
  j["alpha"] = c.alpha_value();
  j["n1"] = c.n1;
  j["csv_path"] = c.csv_path;
  j["label_column"] = c.label_column;
  j["feature_columns"] = c.feature_columns;
  j["modifiable_columns"] = c.modifiable_columns;
  j["n_agents"] = c.n_agents;
  j["clip_quantile"] = c.clip_quantile;
  j["n_iters"] = c.n_iters;
  j["n_reps"] = c.n_reps;
  j["n_truth_reps"] = c.n_truth_reps;
  j["checkpoints"] = c.checkpoints;
  j["n_checkpoints"] = c.n_checkpoints;
  j["seed"] = c.seed;
  j["burn_in"] = c.burn_in;
  j["eta0"] = c.eta0;
  j["a"] = c.a;
  j["d0"] = c.d0;
  j["b"] = c.b;
  j["r0"] = c.r0;
  j["growth"] = c.growth;
  j["C"] = c.C;
  j["beta"] = c.beta_value();
  j["first_block"] = c.first_block;
  j["theta0"] = c.theta0;
  j["v"] = c.v;
  j["level"] = c.level;
  j["analytic_truth"] = c.analytic_truth;
  j["vtilde"] = "scalar";
  j["loss_scale"] = "half";
  return j;
}

namespace detail {
template <typename T>
void take(const json& j, const char* key, T& out) {
  if (!j.contains(key) || j.at(key).is_null()) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw config_error(std::string("config key '") + key + "': " + e.what());
  }
}
template <typename T>
void take(const json& j, const char* key, std::optional<T>& out) {
  if (!j.contains(key) || j.at(key).is_null()) return;
  T v{};
  take(j, key, v);
  out = v;
}
}  // namespace detail

/// Applies every recognised key of j on top of c. Unknown keys are errors.
inline void apply_json(const json& j, experiment_config& c) {
  if (!j.is_object()) throw config_error("config must be a JSON object");
  static const std::vector<std::string> known = {
      "objective", "reg", "stream", "d", "rho", "eps", "sigma", "theta_r", "lambda", "alpha",
      "n1", "csv_path", "label_column", "feature_columns", "modifiable_columns", "n_agents",
      "clip_quantile", "n_iters", "n_reps", "n_truth_reps", "checkpoints", "n_checkpoints",
      "seed", "burn_in", "eta0", "a", "d0", "b", "r0", "growth", "C", "beta", "first_block",
      "theta0", "v", "level", "analytic_truth", "workers", "vtilde", "loss_scale"};
  for (const auto& [key, _] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw config_error("unknown config key '" + key + "'");
  using detail::take;
  take(j, "objective", c.objective);
  take(j, "reg", c.reg);
  take(j, "stream", c.stream);
  take(j, "d", c.d);
  take(j, "rho", c.rho);
  take(j, "eps", c.eps);
  take(j, "sigma", c.sigma);
  take(j, "theta_r", c.theta_r);
  take(j, "lambda", c.lambda);
  take(j, "alpha", c.alpha);
  take(j, "n1", c.n1);
  take(j, "csv_path", c.csv_path);
  take(j, "label_column", c.label_column);
  take(j, "feature_columns", c.feature_columns);
  take(j, "modifiable_columns", c.modifiable_columns);
  take(j, "n_agents", c.n_agents);
  take(j, "clip_quantile", c.clip_quantile);
  take(j, "n_iters", c.n_iters);
  take(j, "n_reps", c.n_reps);
  take(j, "n_truth_reps", c.n_truth_reps);
  take(j, "checkpoints", c.checkpoints);
  take(j, "n_checkpoints", c.n_checkpoints);
  take(j, "seed", c.seed);
  take(j, "burn_in", c.burn_in);
  take(j, "eta0", c.eta0);
  take(j, "a", c.a);
  take(j, "d0", c.d0);
  take(j, "b", c.b);
  take(j, "r0", c.r0);
  take(j, "growth", c.growth);
  take(j, "C", c.C);
  take(j, "beta", c.beta);
  take(j, "first_block", c.first_block);
  take(j, "theta0", c.theta0);
  take(j, "v", c.v);
  take(j, "level", c.level);
  take(j, "analytic_truth", c.analytic_truth);
  take(j, "workers", c.workers);
  if (j.contains("vtilde") && j["vtilde"] != "scalar")
    throw config_error("only vtilde = \"scalar\" is supported");
  if (j.contains("loss_scale") && j["loss_scale"] != "half")
    throw config_error("only loss_scale = \"half\" is supported");
}

inline experiment_config load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open config '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw config_error("config '" + path + "': " + e.what());
  }
  experiment_config c;
  apply_json(j, c);
  return c;
}

/// Geometric checkpoint grid ceil(n 2^{-j}), j = 0 .. count-1, ascending.
inline std::vector<std::uint64_t> geometric_checkpoints(std::uint64_t n, int count) {
  std::vector<std::uint64_t> out;
  for (int j = 0; j < count; ++j) {
    const auto k = static_cast<std::uint64_t>(std::ceil(std::ldexp(static_cast<double>(n), -j)));
    if (k >= 1 && (out.empty() || out.back() != k)) out.push_back(k);
  }
  std::reverse(out.begin(), out.end());
  return out;
}

/// A configuration with defaults filled in, validated, and any external data
/// loaded. Shared read-only by all replications.
struct prepared_experiment {
  experiment_config cfg;
  objective obj;
  stream_kind kind = stream_kind::state_dep;
  Eigen::Index d = 0;
  vector theta_r;
  vector theta0;
  vector v;
  std::vector<std::uint64_t> checkpoints;
  step_schedule eta;
  truncation_schedule trunc;
  batch_schedule blocks;
  csv_schema schema;
  std::shared_ptr<const feature_table> table;
};

inline vector to_vector(const std::vector<double>& x) {
  vector v(static_cast<Eigen::Index>(x.size()));
  for (std::size_t i = 0; i < x.size(); ++i) v[static_cast<Eigen::Index>(i)] = x[i];
  return v;
}

inline std::vector<double> to_std(const vector& v) { return {v.data(), v.data() + v.size()}; }

inline prepared_experiment prepare(const experiment_config& c) {
  prepared_experiment p{c,
                        objective(parse_objective_kind(c.objective), c.reg),
                        parse_stream_kind(c.stream),
                        0,
                        {},
                        {},
                        {},
                        {},
                        step_schedule(c.eta0, c.a),
                        truncation_schedule(c.d0, c.b, c.r0, c.growth),
                        batch_schedule(c.C, c.beta_value(), parse_first_block(c.first_block)),
                        {},
                        nullptr};
  if (c.n_iters < 1) throw config_error("n_iters must be >= 1");
  if (c.n_reps < 1) throw config_error("n_reps must be >= 1");
  if (!(c.level > 0.0 && c.level < 1.0)) throw config_error("level must lie in (0, 1)");

  if (p.kind == stream_kind::agents) {
    if (c.csv_path.empty()) throw config_error("stream 'agents' requires csv_path");
    if (!p.obj.is_classification()) throw config_error("stream 'agents' requires a logistic objective");
    p.schema.label_column = c.label_column;
    p.schema.feature_columns = c.feature_columns;
    p.schema.modifiable_columns = c.modifiable_columns;
    p.schema.n_agents = c.n_agents;
    p.schema.clip_quantile = c.clip_quantile;
    p.schema.alpha = c.alpha_value();
    p.schema.lambda = c.lambda;
    p.schema.n1 = c.n1;
    p.schema.seed = c.seed;
    p.table = std::make_shared<const feature_table>(load_features(c.csv_path, p.schema));
    p.d = static_cast<Eigen::Index>(p.table->columns.size());
    if (c.n1 < 1 || c.n1 > p.table->labels.size())
      throw config_error("n1 must satisfy 1 <= n1 <= number of agents");
    if (!(p.schema.alpha > 0.0) || !(c.lambda > 0.0))
      throw config_error("alpha and lambda must be positive");
  } else {
    if (c.d < 1) throw config_error("d must be >= 1");
    p.d = c.d;
    p.theta_r = c.theta_r.empty() ? vector::Ones(p.d) : to_vector(c.theta_r);
    if (p.theta_r.size() != p.d) throw config_error("theta_r has the wrong dimension");
    ar_chain_params params{c.rho, p.kind == stream_kind::ar1 ? 0.0 : c.eps, c.sigma, p.theta_r};
    if (p.kind == stream_kind::iid) {
      if (!(c.sigma > 0.0)) throw config_error("sigma must be positive");
    } else {
      params.validate();
    }
  }
  p.theta0 = c.theta0.empty() ? vector::Zero(p.d) : to_vector(c.theta0);
  if (p.theta0.size() != p.d) throw config_error("theta0 has the wrong dimension");
  p.v = c.v.empty() ? vector::Ones(p.d) : to_vector(c.v);
  if (p.v.size() != p.d) throw config_error("projection v has the wrong dimension");
  p.checkpoints = c.checkpoints.empty() ? geometric_checkpoints(c.n_iters, c.n_checkpoints)
                                        : c.checkpoints;
  for (std::size_t i = 0; i < p.checkpoints.size(); ++i) {
    if (p.checkpoints[i] < 1 || p.checkpoints[i] > c.n_iters)
      throw config_error("checkpoints must lie in [1, n_iters]");
    if (i > 0 && p.checkpoints[i] <= p.checkpoints[i - 1])
      throw config_error("checkpoints must be strictly increasing");
  }
  if (p.checkpoints.empty()) throw config_error("no checkpoints");
  if (p.theta0.norm() > p.trunc.radius(0)) throw config_error("theta0 lies outside K_0");
  return p;
}

using any_stream = std::variant<iid_stream, markov_stream, agent_population>;

inline any_stream make_stream(const prepared_experiment& p, std::uint64_t seed) {
  const label_mode mode = label_mode_for(p.obj);
  switch (p.kind) {
    case stream_kind::iid:
      return iid_stream(p.theta_r, p.cfg.sigma, mode, seed);
    case stream_kind::ar1:
    case stream_kind::state_dep:
      return markov_stream(
          {p.cfg.rho, p.kind == stream_kind::ar1 ? 0.0 : p.cfg.eps, p.cfg.sigma, p.theta_r}, mode,
          seed);
    default:
      return make_population(*p.table, p.schema, seed);
  }
}

/// Estimator stand-in for runs that only need the average.
struct null_estimator {
  std::uint64_t n = 0;
  void update(const vector&) { ++n; }
  void reset() { n = 0; }
  covariance_estimate finalize() const { return {}; }
  std::uint64_t count() const { return n; }
};

namespace salt {
inline constexpr std::uint64_t replication = 0x7265706c;
inline constexpr std::uint64_t truth = 0x7472757468;
inline constexpr std::uint64_t bootstrap = 0x626f6f74;
}  // namespace salt

inline std::uint64_t replication_seed(std::uint64_t master, std::size_t rep) {
  return derive_seed(master, salt::replication, rep);
}
inline std::uint64_t truth_seed(std::uint64_t master, std::size_t rep) {
  return derive_seed(master, salt::truth, rep);
}

/// One full replication with the batch-means estimator.
inline run_trace run_replication(const prepared_experiment& p, std::uint64_t seed,
                                 std::span<const std::uint64_t> checkpoints) {
  any_stream s = make_stream(p, seed);
  return std::visit(
      [&](auto& stream) {
        obm_accumulator acc(p.d, p.blocks);
        run_options o{p.theta0, p.cfg.burn_in, false};
        return run(p.obj, stream, p.eta, p.trunc, p.cfg.n_iters, checkpoints, acc, o);
      },
      s);
}

// ---------------------------------------------------------------------------
// ground truth

struct ground_truth {
  vector theta_star;
  matrix sigma;
  std::size_t reps = 0;
  std::string config_hash;
  // Monte-Carlo standard errors; not persisted.
  vector theta_star_se;
  double sigma_rel_se = 0.0;
};

/// FNV-1a over the canonical dump of every field that influences the truth.
inline std::string config_hash(const experiment_config& c) {
  json j = to_json(c);
  for (const char* k : {"n_reps", "checkpoints", "n_checkpoints", "v", "level"}) j.erase(k);
  const std::string s = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

/// Closed form for the i.i.d. linear model with u ~ N(0, sigma^2 I):
/// theta* = theta_r and Sigma = sigma^2 (E[uu'])^{-1}.
inline ground_truth analytic_truth(const prepared_experiment& p) {
  if (p.kind != stream_kind::iid || p.obj.kind != objective_kind::linear_sq)
    throw config_error("analytic truth is only available for the iid linear model");
  const double s2 = p.cfg.sigma * p.cfg.sigma;
  const matrix a = s2 * matrix::Identity(p.d, p.d);
  ground_truth g;
  g.theta_star = p.theta_r;
  g.sigma = s2 * a.inverse();
  g.reps = 0;
  g.config_hash = config_hash(p.cfg);
  g.theta_star_se = vector::Zero(p.d);
  return g;
}

/// Monte-Carlo truth: theta* is the mean of the final averages over
/// independent runs and Sigma = n * (their sample covariance).
inline ground_truth estimate_ground_truth(const prepared_experiment& p) {
  const std::size_t R = p.cfg.n_truth_reps;
  if (R < 50) throw config_error("n_truth_reps must be >= 50");
  const std::uint64_t n = p.cfg.n_iters;
  std::vector<vector> finals(R);
  std::vector<int> failed(R, 0);
  parallel_for(R, p.cfg.workers, [&](std::size_t r) {
    try {
      any_stream s = make_stream(p, truth_seed(p.cfg.seed, r));
      finals[r] = std::visit(
          [&](auto& stream) {
            null_estimator none;
            run_options o{p.theta0, p.cfg.burn_in, false};
            return run(p.obj, stream, p.eta, p.trunc, n, {}, none, o).theta_bar;
          },
          s);
      if (!finals[r].allFinite()) failed[r] = 1;
    } catch (const numerical_error&) {
      failed[r] = 1;
    }
  });
  std::string bad;
  for (std::size_t r = 0; r < R; ++r)
    if (failed[r]) bad += (bad.empty() ? "" : ", ") + std::to_string(truth_seed(p.cfg.seed, r));
  if (!bad.empty()) throw numerical_error("ground truth: divergent replications, seeds " + bad);

  auto moments = [&](const std::vector<std::size_t>& idx, vector& mean, matrix& cov) {
    mean = vector::Zero(p.d);
    for (auto i : idx) mean += finals[i];
    mean /= static_cast<double>(idx.size());
    cov = matrix::Zero(p.d, p.d);
    for (auto i : idx) {
      const vector e = finals[i] - mean;
      cov += e * e.transpose();
    }
    cov *= static_cast<double>(n) / static_cast<double>(idx.size() - 1);
  };
  std::vector<std::size_t> all(R);
  for (std::size_t i = 0; i < R; ++i) all[i] = i;

  ground_truth g;
  moments(all, g.theta_star, g.sigma);
  g.reps = R;
  g.config_hash = config_hash(p.cfg);
  g.theta_star_se = (g.sigma.diagonal() / static_cast<double>(n)).cwiseSqrt() /
                    std::sqrt(static_cast<double>(R));

  // bootstrap over replications for the relative Frobenius error of Sigma
  constexpr int B = 200;
  rng boot(derive_seed(p.cfg.seed, salt::bootstrap, 0));
  const double ref = g.sigma.norm();
  double sum2 = 0.0;
  std::vector<std::size_t> idx(R);
  for (int bi = 0; bi < B; ++bi) {
    for (auto& i : idx) i = static_cast<std::size_t>(boot.uniform_index(R));
    vector m;
    matrix c;
    moments(idx, m, c);
    const double e = ref > 0 ? (c - g.sigma).norm() / ref : 0.0;
    sum2 += e * e;
  }
  g.sigma_rel_se = std::sqrt(sum2 / B);
  return g;
}

inline std::string format_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

inline json matrix_to_json(const matrix& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline json to_json(const ground_truth& g) {
  json j;
  j["theta_star"] = to_std(g.theta_star);
  j["sigma"] = matrix_to_json(g.sigma);
  j["reps"] = g.reps;
  j["config_hash"] = g.config_hash;
  return j;
}

inline json to_json(const covariance_estimate& e) {
  return json{{"n", e.n}, {"sigma_hat", matrix_to_json(e.sigma_hat)}};
}

inline ground_truth ground_truth_from_json(const json& j) {
  try {
    ground_truth g;
    g.theta_star = to_vector(j.at("theta_star").get<std::vector<double>>());
    const auto rows = j.at("sigma").get<std::vector<std::vector<double>>>();
    const auto d = static_cast<Eigen::Index>(rows.size());
    if (d != g.theta_star.size()) throw config_error("ground truth: sigma/theta_star size mismatch");
    g.sigma.resize(d, d);
    for (Eigen::Index i = 0; i < d; ++i) {
      if (static_cast<Eigen::Index>(rows[static_cast<std::size_t>(i)].size()) != d)
        throw config_error("ground truth: sigma is not square");
      for (Eigen::Index k = 0; k < d; ++k) g.sigma(i, k) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
    }
    g.reps = j.at("reps").get<std::size_t>();
    g.config_hash = j.at("config_hash").get<std::string>();
    return g;
  } catch (const json::exception& e) {
    throw config_error(std::string("ground truth JSON: ") + e.what());
  }
}

// Doubles are written with 17 significant digits so they round-trip.
inline void write_json_file(const std::string& path, const json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot write '" + path + "'");
  out << j.dump(2) << '\n';
  if (!out) throw io_error("write failed for '" + path + "'");
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open '" + path + "'");
  try {
    json j;
    in >> j;
    return j;
  } catch (const json::exception& e) {
    throw io_error("'" + path + "': " + e.what());
  }
}

inline void save_ground_truth(const std::string& path, const ground_truth& g) {
  write_json_file(path, to_json(g));
}

inline ground_truth load_ground_truth(const std::string& path) {
  return ground_truth_from_json(read_json_file(path));
}

// ---------------------------------------------------------------------------
// experiments

struct metrics_row {
  std::uint64_t checkpoint = 0;
  double err_spectral = 0.0;
  double err_frobenius = 0.0;
  double coverage = 0.0;
  double ci_width = 0.0;
  double mis = 0.0;
  double mean_truncations = 0.0;
};

struct raw_row {
  std::size_t rep = 0;
  std::uint64_t seed = 0;
  std::uint64_t checkpoint = 0;
  double theta_v = 0.0;
  confidence_interval interval;
  bool covered = false;
  double err_spectral = 0.0;
  double err_frobenius = 0.0;
  std::uint64_t truncations = 0;
};

struct experiment_result {
  std::vector<metrics_row> rows;
  std::vector<raw_row> raw;  // rep-major
};

/// Per-checkpoint means over replications. Each metric is averaged over its
/// sorted values, so the result does not depend on the order of `raw`.
inline std::vector<metrics_row> aggregate(std::span<const raw_row> raw,
                                          std::span<const std::uint64_t> checkpoints,
                                          double target, double alpha1) {
  std::vector<metrics_row> rows;
  const double z[] = {target};
  auto mean_of = [](std::vector<double>& xs) {
    std::sort(xs.begin(), xs.end());
    double s = 0.0;
    for (double x : xs) s += x;
    return s / static_cast<double>(xs.size());
  };
  for (std::uint64_t k : checkpoints) {
    std::vector<double> spec, frob, cov, width, mis, trunc;
    for (const raw_row& row : raw) {
      if (row.checkpoint != k) continue;
      spec.push_back(row.err_spectral);
      frob.push_back(row.err_frobenius);
      cov.push_back(row.covered ? 1.0 : 0.0);
      width.push_back(row.interval.width());
      mis.push_back(mis_sample(row.interval.lo, row.interval.hi, alpha1, z).mis);
      trunc.push_back(static_cast<double>(row.truncations));
    }
    if (spec.empty()) throw std::invalid_argument("aggregate: no rows for checkpoint " + std::to_string(k));
    metrics_row m;
    m.checkpoint = k;
    m.err_spectral = mean_of(spec);
    m.err_frobenius = mean_of(frob);
    m.coverage = mean_of(cov);
    m.ci_width = mean_of(width);
    m.mis = mean_of(mis);
    m.mean_truncations = mean_of(trunc);
    rows.push_back(m);
  }
  return rows;
}

/// Replicated runs scored against a fixed ground truth.
inline experiment_result run_experiment(const prepared_experiment& p, const ground_truth& truth) {
  if (truth.theta_star.size() != p.d || truth.sigma.rows() != p.d || truth.sigma.cols() != p.d)
    throw config_error("ground truth dimension does not match the experiment");
  const std::size_t R = p.cfg.n_reps;
  const std::size_t K = p.checkpoints.size();
  const double target = p.v.dot(truth.theta_star);
  const double alpha1 = 1.0 - p.cfg.level;

  std::vector<raw_row> raw(R * K);
  parallel_for(R, p.cfg.workers, [&](std::size_t r) {
    const std::uint64_t seed = replication_seed(p.cfg.seed, r);
    run_trace t;
    try {
      t = run_replication(p, seed, p.checkpoints);
    } catch (const numerical_error& e) {
      throw numerical_error("replication " + std::to_string(r) + " (seed " + std::to_string(seed) +
                            "): " + e.what());
    }
    for (std::size_t c = 0; c < K; ++c) {
      const snapshot& s = t.snapshots[c];
      raw_row& row = raw[r * K + c];
      row.rep = r;
      row.seed = seed;
      row.checkpoint = s.k;
      row.theta_v = p.v.dot(s.theta_bar);
      if (s.sigma.n > 0) {
        row.interval = ci(s.theta_bar, s.sigma.sigma_hat, p.v, s.sigma.n, p.cfg.level);
      } else {
        row.interval = {row.theta_v, row.theta_v, p.cfg.level, 0};
      }
      row.covered = row.interval.contains(target);
      const matrix diff = (s.sigma.n > 0 ? s.sigma.sigma_hat : matrix::Zero(p.d, p.d)) - truth.sigma;
      row.err_spectral = spectral_norm(diff);
      row.err_frobenius = frobenius_norm(diff);
      row.truncations = s.n_truncations;
    }
  });

  experiment_result out;
  out.rows = aggregate(raw, p.checkpoints, target, alpha1);
  out.raw = std::move(raw);
  return out;
}

inline constexpr const char* metrics_header =
    "checkpoint,err_spectral,err_frobenius,coverage,ci_width,mis,mean_truncations";

inline void write_metrics_csv(std::ostream& os, const std::vector<metrics_row>& rows) {
  os << metrics_header << '\n';
  for (const auto& r : rows)
    os << r.checkpoint << ',' << format_double(r.err_spectral) << ','
       << format_double(r.err_frobenius) << ',' << format_double(r.coverage) << ','
       << format_double(r.ci_width) << ',' << format_double(r.mis) << ','
       << format_double(r.mean_truncations) << '\n';
}

inline void write_raw_csv(std::ostream& os, const std::vector<raw_row>& rows) {
  os << "rep,seed,checkpoint,theta_v,ci_lo,ci_hi,covered,err_spectral,err_frobenius,truncations\n";
  for (const auto& r : rows)
    os << r.rep << ',' << r.seed << ',' << r.checkpoint << ',' << format_double(r.theta_v) << ','
       << format_double(r.interval.lo) << ',' << format_double(r.interval.hi) << ','
       << (r.covered ? 1 : 0) << ',' << format_double(r.err_spectral) << ','
       << format_double(r.err_frobenius) << ',' << r.truncations << '\n';
}

inline std::vector<metrics_row> parse_metrics_csv(std::string_view text) {
  const csv_table t = parse_csv(text);
  std::string header;
  for (std::size_t i = 0; i < t.header.size(); ++i) header += (i ? "," : "") + t.header[i];
  if (header != metrics_header)
    throw io_error("metrics CSV: unexpected header '" + header + "'");
  std::vector<metrics_row> rows;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& c = t.rows[i];
    auto num = [&](std::size_t j) { return detail::parse_cell(c[j], i + 2, t.header[j]); };
    metrics_row r;
    r.checkpoint = static_cast<std::uint64_t>(num(0));
    r.err_spectral = num(1);
    r.err_frobenius = num(2);
    r.coverage = num(3);
    r.ci_width = num(4);
    r.mis = num(5);
    r.mean_truncations = num(6);
    rows.push_back(r);
  }
  return rows;
}

inline std::vector<metrics_row> read_metrics_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_metrics_csv(ss.str());
}

// ---------------------------------------------------------------------------
// rate fits

struct slope_fit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
};

/// Least squares of log(y) on log(k). Needs at least four points spanning a
/// decade in k, and strictly positive y.
inline slope_fit fit_loglog(std::span<const double> k, std::span<const double> y) {
  if (k.size() != y.size()) throw std::invalid_argument("fit_slope: size mismatch");
  if (k.size() < 4) throw std::invalid_argument("fit_slope: need at least 4 points");
  const auto [kmin, kmax] = std::minmax_element(k.begin(), k.end());
  if (!(*kmin > 0.0) || *kmax < 10.0 * *kmin)
    throw std::invalid_argument("fit_slope: checkpoints must span at least one decade");
  const std::size_t n = k.size();
  std::vector<double> x(n), z(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!(y[i] > 0.0) || !std::isfinite(y[i]))
      throw numerical_error("fit_slope: nonpositive or non-finite error value");
    x[i] = std::log(k[i]);
    z[i] = std::log(y[i]);
  }
  double mx = 0, mz = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    mz += z[i];
  }
  mx /= static_cast<double>(n);
  mz /= static_cast<double>(n);
  double sxx = 0, sxz = 0, szz = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxz += (x[i] - mx) * (z[i] - mz);
    szz += (z[i] - mz) * (z[i] - mz);
  }
  slope_fit f;
  f.slope = sxz / sxx;
  f.intercept = mz - f.slope * mx;
  double ss_res = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double e = z[i] - (f.intercept + f.slope * x[i]);
    ss_res += e * e;
  }
  f.r2 = szz > 0 ? 1.0 - ss_res / szz : 1.0;
  return f;
}

/// Fit of err_spectral against checkpoint.
inline slope_fit fit_slope(const std::vector<metrics_row>& rows) {
  std::vector<double> k, e;
  for (const auto& r : rows) {
    k.push_back(static_cast<double>(r.checkpoint));
    e.push_back(r.err_spectral);
  }
  return fit_loglog(k, e);
}

}  // namespace obm
