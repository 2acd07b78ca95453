#ifndef BOIRL_EVAL_HPP
#define BOIRL_EVAL_HPP

// Experiment runner and metrics: ESOR, iterations-to-expert, NLL landscape
// grid scans, rho-vector dumps and the config-driven multi-seed pipeline
// with CSV/JSON persistence. Reports carry no wall-clock fields, so
// re-running a config reproduces them byte for byte.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "boirl/birl.hpp"
#include "boirl/bo.hpp"
#include "boirl/envs.hpp"
#include "boirl/projection.hpp"

namespace boirl {

namespace detail {

inline std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline void write_file_atomic(const std::string& path, const std::string& contents) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw std::runtime_error("write_file_atomic: cannot open " + tmp);
    os << contents;
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace detail

// --- ESOR --------------------------------------------------------------------

// Expected sum of (ground truth) rewards: the mean discounted ground-truth
// return of rollouts drawn from the soft policy induced by theta_hat.
inline double esor(const RewardParams& theta_hat, const EnvironmentSpec& env,
                   const RewardParams& ground_truth, int n_rollouts, int horizon,
                   std::mt19937_64& rng, double vi_tol = 1e-8) {
  if (n_rollouts < 1 || horizon < 1) throw std::invalid_argument("esor: bad rollout settings");
  auto learned_table = eval_reward(theta_hat, env);
  SoftVIOptions vi;
  vi.tol = vi_tol;
  auto policy = soft_value_iteration(env.mdp, learned_table, vi);
  auto truth_table = eval_reward(ground_truth, env);
  const double gamma = env.mdp.discount();
  double total = 0.0;
  for (int i = 0; i < n_rollouts; ++i) {
    int start = env.mdp.sample_start(rng);
    auto traj = sample_trajectory(env.mdp, &policy, start, horizon, rng);
    total += traj_reward(traj, truth_table, gamma);
  }
  return total / static_cast<double>(n_rollouts);
}

inline double esor(const RewardParams& theta_hat, const EnvironmentSpec& env,
                   const RewardParams& ground_truth, int n_rollouts, int horizon,
                   std::uint64_t seed, double vi_tol = 1e-8) {
  auto rng = make_rng(seed, 0xe50);
  return esor(theta_hat, env, ground_truth, n_rollouts, horizon, rng, vi_tol);
}

inline double expert_esor(const EnvironmentSpec& env, int n_rollouts, int horizon,
                          std::uint64_t seed, double vi_tol = 1e-8) {
  if (!env.ground_truth) throw std::invalid_argument("expert_esor: environment lacks ground truth");
  return esor(*env.ground_truth, env, *env.ground_truth, n_rollouts, horizon, seed, vi_tol);
}

// Success threshold for "achieving the expert's ESOR" at a relative
// tolerance; phrased via |expert| so it degrades (rather than exceeds) the
// target when the expert return is negative.
inline double esor_success_threshold(double expert_value, double tolerance_fraction) {
  return expert_value - tolerance_fraction * std::abs(expert_value);
}

struct EsorOptions {
  int n_rollouts = 500;
  int horizon = 15;
  std::uint64_t seed = 0;
  double vi_tol = 1e-8;
};

// First trace iteration whose best-so-far theta reaches the expert's ESOR
// within the tolerance; nullopt if the trace never does. ESOR is evaluated
// once per distinct best-so-far point.
inline std::optional<int> iterations_to_expert(const BOTrace& trace, const EnvironmentSpec& env,
                                               double expert_esor_value, double tolerance_fraction,
                                               const EsorOptions& opt = {}) {
  if (trace.records.empty()) throw std::invalid_argument("iterations_to_expert: empty trace");
  if (!env.ground_truth) {
    throw std::invalid_argument("iterations_to_expert: environment lacks ground truth");
  }
  const double threshold = esor_success_threshold(expert_esor_value, tolerance_fraction);
  std::map<std::vector<double>, double> cache;
  for (const auto& rec : trace.records) {
    auto it = cache.find(rec.best_theta);
    double value;
    if (it != cache.end()) {
      value = it->second;
    } else {
      RewardParams params(rec.best_theta, env.family, env.theta_bounds);
      value = esor(params, env, *env.ground_truth, opt.n_rollouts, opt.horizon, opt.seed,
                   opt.vi_tol);
      cache.emplace(rec.best_theta, value);
    }
    if (value >= threshold) return rec.iteration;
  }
  return std::nullopt;
}

// --- Landscape scans ----------------------------------------------------------

struct GridScanResult {
  int axis_i = 0;
  int axis_j = 1;
  int resolution = 2;
  std::vector<double> axis_i_values;
  std::vector<double> axis_j_values;
  std::vector<double> nll;      // row-major [i * resolution + j]
  std::vector<double> gp_mean;  // same layout; empty unless a GP was supplied

  double nll_at(int i, int j) const { return nll[static_cast<std::size_t>(i) * resolution + j]; }
};

// Dense NLL over a 2-D slice of the parameter box; grid endpoints sit on the
// bounds. When a fitted GP is supplied its posterior mean is evaluated over
// the same grid.
inline GridScanResult grid_scan(const EnvironmentSpec& env, std::span<const Trajectory> demos,
                                int axis_i, int axis_j, std::vector<double> fixed_theta,
                                int resolution, double vi_tol = 1e-8,
                                const GPState* gp = nullptr) {
  const auto d = env.theta_bounds.size();
  if (axis_i < 0 || axis_j < 0 || axis_i == axis_j || axis_i >= static_cast<int>(d) ||
      axis_j >= static_cast<int>(d)) {
    throw std::invalid_argument("grid_scan: bad axes");
  }
  if (resolution < 2) throw std::invalid_argument("grid_scan: resolution must be >= 2");
  if (fixed_theta.size() != d) throw std::invalid_argument("grid_scan: fixed theta dimension");

  GridScanResult result;
  result.axis_i = axis_i;
  result.axis_j = axis_j;
  result.resolution = resolution;
  auto linspace = [&](int axis) {
    std::vector<double> v(resolution);
    const auto& b = env.theta_bounds[axis];
    for (int k = 0; k < resolution; ++k) {
      v[k] = b.lo + b.width() * static_cast<double>(k) / static_cast<double>(resolution - 1);
    }
    return v;
  };
  result.axis_i_values = linspace(axis_i);
  result.axis_j_values = linspace(axis_j);
  result.nll.resize(static_cast<std::size_t>(resolution) * resolution);
  if (gp != nullptr) result.gp_mean.resize(result.nll.size());

  SoftVIOptions vi;
  vi.tol = vi_tol;
  auto theta = std::move(fixed_theta);
  for (int i = 0; i < resolution; ++i) {
    for (int j = 0; j < resolution; ++j) {
      theta[axis_i] = result.axis_i_values[i];
      theta[axis_j] = result.axis_j_values[j];
      RewardParams params(theta, env.family, env.theta_bounds);
      auto table = eval_reward(params, env);
      auto policy = soft_value_iteration(env.mdp, table, vi);
      result.nll[static_cast<std::size_t>(i) * resolution + j] = nll(demos, policy, env.mdp);
      if (gp != nullptr) {
        result.gp_mean[static_cast<std::size_t>(i) * resolution + j] = gp->posterior(theta).mean;
      }
    }
  }
  return result;
}

inline void write_grid_csv(std::ostream& os, const GridScanResult& g) {
  os << "row,col,theta_" << g.axis_i << ",theta_" << g.axis_j << ",nll";
  if (!g.gp_mean.empty()) os << ",gp_mean";
  os << "\n";
  for (int i = 0; i < g.resolution; ++i) {
    for (int j = 0; j < g.resolution; ++j) {
      os << i << ',' << j << ',' << detail::fmt(g.axis_i_values[i]) << ','
         << detail::fmt(g.axis_j_values[j]) << ','
         << detail::fmt(g.nll[static_cast<std::size_t>(i) * g.resolution + j]);
      if (!g.gp_mean.empty()) {
        os << ',' << detail::fmt(g.gp_mean[static_cast<std::size_t>(i) * g.resolution + j]);
      }
      os << '\n';
    }
  }
}

inline void write_grid_csv(const std::string& path, const GridScanResult& g) {
  std::ostringstream os;
  write_grid_csv(os, g);
  detail::write_file_atomic(path, os.str());
}

// rho-vectors over a 2-D theta grid, dumped for external analysis of the
// projection space.
inline void write_rho_grid_csv(std::ostream& os, const EnvironmentSpec& env,
                               const ProjectionBasis& basis, int axis_i, int axis_j,
                               std::vector<double> fixed_theta, int resolution) {
  TrajectoryScorer scorer(basis, env);
  os << "theta_" << axis_i << ",theta_" << axis_j;
  for (int k = 0; k < scorer.k(); ++k) os << ",rho_" << k;
  os << "\n";
  auto theta = std::move(fixed_theta);
  const auto& bi = env.theta_bounds[axis_i];
  const auto& bj = env.theta_bounds[axis_j];
  std::vector<double> rho_out, scratch;
  for (int i = 0; i < resolution; ++i) {
    for (int j = 0; j < resolution; ++j) {
      theta[axis_i] = bi.lo + bi.width() * static_cast<double>(i) / (resolution - 1);
      theta[axis_j] = bj.lo + bj.width() * static_cast<double>(j) / (resolution - 1);
      RewardParams params(theta, env.family, env.theta_bounds);
      scorer.rho_vector(params, rho_out, scratch);
      os << detail::fmt(theta[axis_i]) << ',' << detail::fmt(theta[axis_j]);
      for (double r : rho_out) os << ',' << detail::fmt(r);
      os << '\n';
    }
  }
}

// --- Trace persistence ---------------------------------------------------------

inline void write_trace_csv(std::ostream& os, const BOTrace& trace) {
  if (trace.records.empty()) return;
  const auto d = trace.records.front().theta.size();
  os << "iter";
  for (std::size_t i = 0; i < d; ++i) os << ",theta_" << i;
  os << ",nll,best_nll,wall_ms\n";
  for (const auto& rec : trace.records) {
    os << rec.iteration;
    for (double v : rec.theta) os << ',' << detail::fmt(v);
    os << ',' << detail::fmt(rec.nll) << ',' << detail::fmt(rec.best_nll) << ','
       << detail::fmt(rec.wall_ms) << '\n';
  }
}

inline void write_trace_csv(const std::string& path, const BOTrace& trace) {
  std::ostringstream os;
  write_trace_csv(os, trace);
  detail::write_file_atomic(path, os.str());
}

// --- Experiment pipeline ---------------------------------------------------------

enum class Algorithm { BoirlRhoRbf, BoirlRbf, BoirlMatern, Birl };

inline std::string to_string(Algorithm a) {
  switch (a) {
    case Algorithm::BoirlRhoRbf: return "boirl-rhorbf";
    case Algorithm::BoirlRbf: return "boirl-rbf";
    case Algorithm::BoirlMatern: return "boirl-matern";
    case Algorithm::Birl: return "birl";
  }
  return "boirl-rhorbf";
}

inline Algorithm algorithm_from_string(const std::string& s) {
  if (s == "boirl-rhorbf") return Algorithm::BoirlRhoRbf;
  if (s == "boirl-rbf") return Algorithm::BoirlRbf;
  if (s == "boirl-matern") return Algorithm::BoirlMatern;
  if (s == "birl") return Algorithm::Birl;
  throw std::invalid_argument("unknown algorithm: " + s);
}

struct ExperimentConfig {
  Algorithm algorithm = Algorithm::BoirlRhoRbf;
  std::vector<std::uint64_t> seeds = {0};
  int budget = 100;  // BO evaluations after init; BIRL chain length
  int n_init = 5;
  InitStrategy init_strategy = InitStrategy::AdversarialHighNll;
  int demo_count = 50;
  int demo_length = 15;
  std::uint64_t demo_seed = 42;
  int basis_k = 10;
  int basis_m = 5;
  int esor_rollouts = 500;
  int expert_esor_rollouts = 2000;
  double tolerance_fraction = 0.02;
  double vi_tol = 1e-8;
  int hyper_refit_every = 5;
  std::string out_dir;  // empty: keep everything in memory
  bool export_gp = false;
  bool export_basis = false;

  void check() const {
    if (seeds.empty()) throw std::invalid_argument("ExperimentConfig: seeds must be non-empty");
    if (demo_count < 1 || demo_length < 1) {
      throw std::invalid_argument("ExperimentConfig: demonstration settings invalid");
    }
  }
};

struct SeedMetrics {
  std::uint64_t seed = 0;
  bool completed = false;
  bool success = false;
  int iterations = 0;            // trace iterations, counting initialization
  int iterations_post_init = 0;  // same, not counting initialization
  double best_nll = std::numeric_limits<double>::quiet_NaN();
  double best_esor = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> best_theta;
  std::string error;
};

struct MetricsReport {
  std::vector<SeedMetrics> per_seed;
  double expert_esor_value = 0.0;
  double success_rate = 0.0;
  // Aggregates over successful seeds.
  double mean_iterations = std::numeric_limits<double>::quiet_NaN();
  double std_iterations = std::numeric_limits<double>::quiet_NaN();
  double median_iterations = std::numeric_limits<double>::quiet_NaN();
  double median_iterations_post_init = std::numeric_limits<double>::quiet_NaN();
};

namespace detail {

inline BOTrace trace_from_birl(const BIRLResult& birl) {
  BOTrace trace;
  double best = std::numeric_limits<double>::infinity();
  std::vector<double> best_theta;
  int iter = 0;
  for (const auto& s : birl.chain) {
    TraceRecord rec;
    rec.iteration = ++iter;
    rec.theta = s.theta;
    rec.nll = s.nll;
    if (s.nll < best) {
      best = s.nll;
      best_theta = s.theta;
    }
    rec.best_nll = best;
    rec.best_theta = best_theta;
    trace.records.push_back(std::move(rec));
  }
  return trace;
}

}  // namespace detail

inline KernelSpec kernel_for(Algorithm algorithm, const EnvironmentSpec& env) {
  KernelSpec kernel;
  switch (algorithm) {
    case Algorithm::BoirlRhoRbf:
      kernel.kind = KernelKind::RhoRbf;  // basis attached per seed inside run_boirl
      break;
    case Algorithm::BoirlMatern:
      kernel.kind = KernelKind::Matern52;
      kernel.whiten_bounds = env.theta_bounds;
      break;
    default:
      kernel.kind = KernelKind::Rbf;
      kernel.whiten_bounds = env.theta_bounds;
      break;
  }
  return kernel;
}

// Runs the configured algorithm once per seed over a shared demonstration
// set, writes per-seed traces and the aggregate report, and returns the
// metrics. Failures of individual seeds are recorded; aggregates cover the
// completed seeds.
inline MetricsReport run_experiment(const EnvironmentSpec& env, const ExperimentConfig& config) {
  config.check();
  if (!env.ground_truth) throw std::invalid_argument("run_experiment: environment lacks ground truth");
  const bool persist = !config.out_dir.empty();
  if (persist) std::filesystem::create_directories(config.out_dir);

  auto demos = sample_demos(env, config.demo_count, config.demo_length, config.demo_seed,
                            config.vi_tol);
  MetricsReport report;
  report.expert_esor_value =
      expert_esor(env, config.expert_esor_rollouts, config.demo_length, config.demo_seed);

  SoftVIOptions vi;
  vi.tol = config.vi_tol;
  EsorOptions esor_opt;
  esor_opt.n_rollouts = config.esor_rollouts;
  esor_opt.horizon = config.demo_length;
  esor_opt.seed = config.demo_seed;
  esor_opt.vi_tol = config.vi_tol;

  for (std::uint64_t seed : config.seeds) {
    SeedMetrics metrics;
    metrics.seed = seed;
    try {
      BOTrace trace;
      std::optional<GPState> gp;
      std::shared_ptr<const ProjectionBasis> basis;
      if (config.algorithm == Algorithm::Birl) {
        BIRLConfig birl;
        birl.n_samples = config.budget;
        birl.bounds = env.theta_bounds;
        birl.rng_seed = seed;
        auto result = run_birl(env, demos, birl, vi);
        if (persist) {
          std::ostringstream os;
          write_birl_csv(os, result);
          detail::write_file_atomic(
              config.out_dir + "/birl_seed" + std::to_string(seed) + ".csv", os.str());
        }
        trace = detail::trace_from_birl(result);
      } else {
        BOConfig bo;
        bo.budget = config.budget;
        bo.n_init = config.n_init;
        bo.bounds = env.theta_bounds;
        bo.kernel = kernel_for(config.algorithm, env);
        bo.init_strategy = config.init_strategy;
        bo.rng_seed = seed;
        bo.hyper_refit_every = config.hyper_refit_every;
        bo.basis_k = config.basis_k;
        bo.basis_m = config.basis_m;
        auto result = run_boirl(env, demos, bo, vi);
        trace = std::move(result.trace);
        gp = std::move(result.gp);
        if (gp) basis = gp->kernel().basis;
      }
      metrics.completed = true;
      metrics.best_nll = trace.records.back().best_nll;
      metrics.best_theta = trace.records.back().best_theta;
      RewardParams best_params(metrics.best_theta, env.family, env.theta_bounds);
      metrics.best_esor = esor(best_params, env, *env.ground_truth, esor_opt.n_rollouts,
                               esor_opt.horizon, esor_opt.seed, esor_opt.vi_tol);
      auto reached = iterations_to_expert(trace, env, report.expert_esor_value,
                                          config.tolerance_fraction, esor_opt);
      metrics.success = reached.has_value();
      if (reached) {
        metrics.iterations = *reached;
        metrics.iterations_post_init =
            config.algorithm == Algorithm::Birl ? *reached : std::max(0, *reached - config.n_init);
      }
      if (persist) {
        write_trace_csv(config.out_dir + "/trace_seed" + std::to_string(seed) + ".csv", trace);
        if (config.export_gp && gp) {
          save_gp(config.out_dir + "/gp_seed" + std::to_string(seed) + ".json", *gp);
        }
        if (config.export_basis && basis) {
          write_basis(config.out_dir + "/basis_seed" + std::to_string(seed) + ".jsonl", *basis);
        }
      }
    } catch (const std::exception& e) {
      metrics.completed = false;
      metrics.error = e.what();
    }
    report.per_seed.push_back(std::move(metrics));
  }

  int successes = 0;
  std::vector<double> iters, iters_post;
  for (const auto& m : report.per_seed) {
    if (m.success) {
      ++successes;
      iters.push_back(m.iterations);
      iters_post.push_back(m.iterations_post_init);
    }
  }
  report.success_rate = static_cast<double>(successes) / report.per_seed.size();
  if (successes > 0) {
    report.mean_iterations = mean_of(iters);
    report.std_iterations = stddev_of(iters);
    report.median_iterations = median_of(iters);
    report.median_iterations_post_init = median_of(iters_post);
  }

  if (persist) {
    std::ostringstream csv;
    csv << "seed,completed,success,iterations,iterations_post_init,best_nll,best_esor";
    std::size_t d = env.theta_bounds.size();
    for (std::size_t i = 0; i < d; ++i) csv << ",theta_" << i;
    csv << "\n";
    for (const auto& m : report.per_seed) {
      csv << m.seed << ',' << (m.completed ? 1 : 0) << ',' << (m.success ? 1 : 0) << ','
          << m.iterations << ',' << m.iterations_post_init << ',' << detail::fmt(m.best_nll)
          << ',' << detail::fmt(m.best_esor);
      for (std::size_t i = 0; i < d; ++i) {
        csv << ',' << (i < m.best_theta.size() ? detail::fmt(m.best_theta[i]) : "");
      }
      csv << "\n";
    }
    detail::write_file_atomic(config.out_dir + "/metrics.csv", csv.str());

    nlohmann::json j;
    j["algorithm"] = to_string(config.algorithm);
    j["environment"] = to_string(env.kind);
    j["budget"] = config.budget;
    j["n_init"] = config.n_init;
    j["expert_esor"] = report.expert_esor_value;
    j["success_rate"] = report.success_rate;
    j["mean_iterations"] = report.mean_iterations;
    j["std_iterations"] = report.std_iterations;
    j["median_iterations"] = report.median_iterations;
    j["median_iterations_post_init"] = report.median_iterations_post_init;
    auto rows = nlohmann::json::array();
    for (const auto& m : report.per_seed) {
      nlohmann::json row;
      row["seed"] = m.seed;
      row["completed"] = m.completed;
      row["success"] = m.success;
      row["iterations"] = m.iterations;
      row["iterations_post_init"] = m.iterations_post_init;
      row["best_nll"] = m.best_nll;
      row["best_esor"] = m.best_esor;
      row["best_theta"] = m.best_theta;
      if (!m.error.empty()) row["error"] = m.error;
      rows.push_back(std::move(row));
    }
    j["per_seed"] = std::move(rows);
    detail::write_file_atomic(config.out_dir + "/report.json", j.dump(2) + "\n");
  }
  return report;
}

}  // namespace boirl

#endif  // BOIRL_EVAL_HPP
