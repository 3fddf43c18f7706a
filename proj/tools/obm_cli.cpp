// Command-line front end: ground truth, replicated experiments, slope fits
// and a single demo run.

#include <cstdio>
#include <fstream>
#include <functional>
#include <memory>
#include <type_traits>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "obm/obm.hpp"

namespace {

using obm::json;

/// Config flags shared by every subcommand that builds an experiment. Values
/// given on the command line override the --config file.
struct config_flags {
  std::string config_path;
  json overrides = json::object();
  std::vector<std::function<void()>> collectors;

  template <typename T>
  void add(CLI::App& app, const std::string& key, const std::string& help) {
    auto holder = std::make_shared<std::optional<T>>();
    auto* opt = app.add_option("--" + key, *holder, help);
    if constexpr (requires { typename T::value_type; } && !std::is_same_v<T, std::string>)
      opt->delimiter(',');
    collectors.push_back([this, holder, key] {
      if (*holder) overrides[key] = **holder;
    });
  }

  void attach(CLI::App& app) {
    app.add_option("--config", config_path, "JSON key-value config file");
    add<std::string>(app, "objective", "linear_sq | logistic_l2");
    add<double>(app, "reg", "l2 coefficient for logistic_l2");
    add<std::string>(app, "stream", "iid | ar1 | state_dep | agents");
    add<int>(app, "d", "dimension");
    add<double>(app, "rho", "AR coefficient in (0,1)");
    add<double>(app, "eps", "state dependence strength");
    add<double>(app, "sigma", "noise scale");
    add<std::vector<double>>(app, "theta_r", "generating parameter (comma separated)");
    add<double>(app, "lambda", "agent cost sensitivity");
    add<double>(app, "alpha", "agent step size (default lambda/2)");
    add<std::size_t>(app, "n1", "agents updated per round");
    add<std::string>(app, "csv_path", "agent feature table");
    add<std::string>(app, "label_column", "label column name");
    add<std::vector<std::string>>(app, "feature_columns", "feature columns");
    add<std::vector<std::string>>(app, "modifiable_columns", "strategically modifiable columns");
    add<std::size_t>(app, "n_agents", "agents subsampled from the table (0 = all)");
    add<double>(app, "clip_quantile", "per-feature clipping quantile (0 disables)");
    add<std::uint64_t>(app, "n_iters", "iterations per run");
    add<std::size_t>(app, "n_reps", "replications");
    add<std::size_t>(app, "n_truth_reps", "replications for the ground truth");
    add<std::vector<std::uint64_t>>(app, "checkpoints", "checkpoint iterations");
    add<int>(app, "n_checkpoints", "size of the default geometric grid");
    add<std::uint64_t>(app, "seed", "master seed");
    add<std::uint64_t>(app, "burn_in", "iterates excluded from averaging");
    add<double>(app, "eta0", "step size scale");
    add<double>(app, "a", "step size exponent");
    add<double>(app, "d0", "move threshold scale");
    add<double>(app, "b", "move threshold exponent");
    add<double>(app, "r0", "radius of the first truncation set");
    add<double>(app, "growth", "radius multiplier per truncation");
    add<double>(app, "C", "block schedule scale");
    add<double>(app, "beta", "block schedule exponent (default 2/(1-a))");
    add<std::string>(app, "first_block", "leading | one | strict");
    add<std::vector<double>>(app, "theta0", "initial point");
    add<std::vector<double>>(app, "v", "projection for the confidence interval");
    add<double>(app, "level", "confidence level");
    add<bool>(app, "analytic_truth", "use the closed-form truth (iid linear only)");
    add<unsigned>(app, "workers", "worker threads (0 = all cores)");
  }

  obm::experiment_config resolve() {
    for (auto& c : collectors) c();
    obm::experiment_config cfg;
    if (!config_path.empty()) cfg = obm::load_config_file(config_path);
    obm::apply_json(overrides, cfg);
    return cfg;
  }
};

void print_matrix(std::ostream& os, const obm::matrix& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    os << "  ";
    for (Eigen::Index j = 0; j < m.cols(); ++j) os << (j ? " " : "") << obm::format_double(m(i, j));
    os << '\n';
  }
}

obm::ground_truth obtain_truth(const obm::prepared_experiment& p, const std::string& truth_path,
                               bool save) {
  const std::string hash = obm::config_hash(p.cfg);
  if (p.cfg.analytic_truth) return obm::analytic_truth(p);
  if (!truth_path.empty()) {
    std::ifstream probe(truth_path);
    if (probe) {
      obm::ground_truth g = obm::load_ground_truth(truth_path);
      if (g.config_hash == hash) return g;
      std::cerr << "ground truth '" << truth_path << "' was computed for config " << g.config_hash
                << ", current config is " << hash << "; recomputing\n";
    }
  }
  obm::ground_truth g = obm::estimate_ground_truth(p);
  std::cerr << "ground truth: " << g.reps << " reps, relative Frobenius SE of Sigma "
            << obm::format_double(g.sigma_rel_se) << '\n';
  if (save && !truth_path.empty()) obm::save_ground_truth(truth_path, g);
  return g;
}

void write_to(const std::string& path, const std::function<void(std::ostream&)>& fn) {
  if (path.empty() || path == "-") {
    fn(std::cout);
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw obm::io_error("cannot write '" + path + "'");
  fn(out);
  if (!out) throw obm::io_error("write failed for '" + path + "'");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Online overlapping batch-means inference for SGD on Markovian data"};
  app.require_subcommand(1);

  config_flags truth_flags, run_flags, demo_flags;
  std::string truth_out;
  auto* truth = app.add_subcommand("truth", "Monte-Carlo ground truth for theta* and Sigma");
  truth_flags.attach(*truth);
  truth->add_option("--out", truth_out, "ground truth JSON output")->required();

  std::string run_truth, run_out, run_raw;
  auto* run = app.add_subcommand("run", "Replicated experiment, writes the metrics CSV");
  run_flags.attach(*run);
  run->add_option("--truth", run_truth,
                  "ground truth JSON; computed and written here when missing or stale");
  run->add_option("--out", run_out, "metrics CSV output (default stdout)");
  run->add_option("--raw", run_raw, "optional per-replication CSV");

  std::string slope_in;
  std::uint64_t slope_min = 0;
  auto* slope = app.add_subcommand("slope", "Log-log fit of err_spectral against checkpoint");
  slope->add_option("metrics", slope_in, "metrics CSV")->required();
  slope->add_option("--min-checkpoint", slope_min, "ignore rows below this checkpoint");

  auto* demo = app.add_subcommand("demo", "Single run printing Sigma_hat and the interval");
  demo_flags.attach(*demo);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : obm::exit_code::config;
  }

  try {
    if (*truth) {
      const auto p = obm::prepare(truth_flags.resolve());
      const obm::ground_truth g = obm::estimate_ground_truth(p);
      obm::save_ground_truth(truth_out, g);
      std::cerr << "ground truth: " << g.reps << " reps, relative Frobenius SE of Sigma "
                << obm::format_double(g.sigma_rel_se) << '\n';
    } else if (*run) {
      const auto p = obm::prepare(run_flags.resolve());
      const obm::ground_truth g = obtain_truth(p, run_truth, true);
      const auto res = obm::run_experiment(p, g);
      write_to(run_out, [&](std::ostream& os) { obm::write_metrics_csv(os, res.rows); });
      if (!run_raw.empty())
        write_to(run_raw, [&](std::ostream& os) { obm::write_raw_csv(os, res.raw); });
    } else if (*slope) {
      auto rows = obm::read_metrics_csv(slope_in);
      std::erase_if(rows, [&](const obm::metrics_row& r) { return r.checkpoint < slope_min; });
      const auto f = obm::fit_slope(rows);
      std::cout << "slope " << obm::format_double(f.slope) << "\nintercept "
                << obm::format_double(f.intercept) << "\nr2 " << obm::format_double(f.r2) << '\n';
    } else if (*demo) {
      auto cfg = demo_flags.resolve();
      const auto p = obm::prepare(cfg);
      const std::vector<std::uint64_t> cps{cfg.n_iters};
      const auto t = obm::run_replication(p, obm::replication_seed(cfg.seed, 0), cps);
      const auto& s = t.snapshots.back();
      std::cout << "iterations " << cfg.n_iters << "\ntruncations " << t.n_truncations
                << "\ntheta_bar";
      for (Eigen::Index i = 0; i < s.theta_bar.size(); ++i)
        std::cout << ' ' << obm::format_double(s.theta_bar[i]);
      std::cout << "\nsigma_hat\n";
      print_matrix(std::cout, s.sigma.sigma_hat);
      if (s.sigma.n > 0) {
        const auto c = obm::ci(s.theta_bar, s.sigma, p.v, cfg.level);
        std::cout << "ci " << obm::format_double(c.lo) << ' ' << obm::format_double(c.hi)
                  << " (level " << cfg.level << ", v'theta_bar " << obm::format_double(p.v.dot(s.theta_bar))
                  << ")\n";
      }
    }
  } catch (const obm::numerical_error& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return obm::exit_code::numerical;
  } catch (const obm::io_error& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return obm::exit_code::io;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return obm::exit_code::config;
  } catch (const std::domain_error& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return obm::exit_code::config;
  } catch (const std::out_of_range& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return obm::exit_code::config;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return obm::exit_code::ok;
}
