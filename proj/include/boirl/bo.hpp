#ifndef BOIRL_BO_HPP
#define BOIRL_BO_HPP

// The BO-IRL outer loop: initialization (uniform or adversarial high-NLL),
// expected-improvement acquisition maximized over low-discrepancy candidates
// with a bounded pattern-search refinement, exact NLL evaluation through
// soft policy optimization, GP update and best-seen tracking.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "boirl/common.hpp"
#include "boirl/envs.hpp"
#include "boirl/gp.hpp"
#include "boirl/mdp.hpp"
#include "boirl/projection.hpp"

namespace boirl {

enum class InitStrategy { Random, AdversarialHighNll };

struct BOConfig {
  int budget = 100;  // objective evaluations after initialization
  int n_init = 5;
  Bounds bounds;
  KernelSpec kernel;
  GPConfig gp{1e-4, true};
  int candidate_count = 2048;
  InitStrategy init_strategy = InitStrategy::Random;
  std::uint64_t rng_seed = 0;
  // Lengthscale re-selection by LML grid search every this many evaluations
  // during the optimization phase; 0 disables it.
  int hyper_refit_every = 5;
  int pattern_search_evals = 100;
  // Coarse pre-scan resolution per free dimension for the adversarial init.
  int prescan_resolution = 5;
  double duplicate_tol = 1e-9;
  // Basis generation when the kernel is rho-RBF and carries no basis yet.
  int basis_k = 10;
  int basis_m = 5;

  void check() const {
    if (budget < 0) throw std::invalid_argument("BOConfig: budget must be >= 0");
    if (n_init < 1) throw std::invalid_argument("BOConfig: n_init must be >= 1");
    if (candidate_count < 1) throw std::invalid_argument("BOConfig: candidate_count must be >= 1");
    if (bounds.empty()) throw std::invalid_argument("BOConfig: bounds required");
  }
};

struct TraceRecord {
  int iteration = 0;  // 1-based, counts initialization evaluations
  std::vector<double> theta;
  double nll = 0.0;
  double best_nll = 0.0;
  std::vector<double> best_theta;
  double wall_ms = 0.0;
};

struct BOTrace {
  std::vector<TraceRecord> records;
};

using Objective = std::function<double(std::span<const double>)>;

struct BOResult {
  BOTrace trace;
  std::optional<GPState> gp;
  std::vector<double> best_theta;
  double best_nll = std::numeric_limits<double>::infinity();
};

// Thrown when an objective evaluation fails mid-run; carries the trace of
// every evaluation completed before the failure.
struct BORunError : std::runtime_error {
  BOTrace partial_trace;
  BORunError(const std::string& what, BOTrace trace)
      : std::runtime_error(what), partial_trace(std::move(trace)) {}
};

// Exact-NLL objective: soft value iteration at theta, then the maxent
// demonstration NLL.
inline Objective make_nll_objective(const EnvironmentSpec& env, std::vector<Trajectory> demos,
                                    SoftVIOptions vi = {}, bool include_transition_terms = true) {
  return [&env, demos = std::move(demos), vi, include_transition_terms](
             std::span<const double> theta) -> double {
    RewardParams params(std::vector<double>(theta.begin(), theta.end()), env.family,
                        env.theta_bounds);
    auto table = eval_reward(params, env);
    auto policy = soft_value_iteration(env.mdp, table, vi);
    return nll(demos, policy, env.mdp, include_transition_terms);
  };
}

// EI under the minimization convention: f_best is the smallest observed
// value and improvement is f_best - Y.
inline double expected_improvement_value(double mean, double variance, double f_best) {
  double sigma = std::sqrt(std::max(variance, 0.0));
  if (sigma <= 0.0) return 0.0;
  double z = (f_best - mean) / sigma;
  double ei = sigma * (z * normal_cdf(z) + normal_pdf(z));
  return ei > 0.0 ? ei : 0.0;
}

inline double expected_improvement(const GPState& state, std::span<const double> query,
                                   double f_best) {
  auto stats = state.posterior(query);
  return expected_improvement_value(stats.mean, stats.variance, f_best);
}

namespace detail {

inline std::vector<double> uniform_point(const Bounds& bounds, std::mt19937_64& rng) {
  std::vector<double> x(bounds.size());
  for (std::size_t i = 0; i < bounds.size(); ++i) {
    x[i] = bounds[i].width() > 0.0 ? uniform_in(rng, bounds[i].lo, bounds[i].hi) : bounds[i].lo;
  }
  return x;
}

// Halton candidates with a random Cranley-Patterson shift per call. Frozen
// coordinates stay at their bound value.
inline std::vector<std::vector<double>> halton_candidates(const Bounds& bounds, int count,
                                                          std::mt19937_64& rng) {
  std::vector<std::size_t> free_dims;
  for (std::size_t i = 0; i < bounds.size(); ++i) {
    if (bounds[i].width() > 0.0) free_dims.push_back(i);
  }
  std::vector<double> shift(free_dims.size());
  for (auto& s : shift) s = uniform01(rng);
  std::vector<std::vector<double>> candidates(count);
  for (int c = 0; c < count; ++c) {
    std::vector<double> x(bounds.size());
    for (std::size_t i = 0; i < bounds.size(); ++i) x[i] = bounds[i].lo;
    for (std::size_t f = 0; f < free_dims.size(); ++f) {
      double u = halton(static_cast<std::uint64_t>(c) + 1, nth_prime(f)) + shift[f];
      u -= std::floor(u);
      std::size_t i = free_dims[f];
      x[i] = bounds[i].lo + u * bounds[i].width();
    }
    candidates[c] = std::move(x);
  }
  return candidates;
}

}  // namespace detail

// Acquisition maximization: EI over `candidate_count` low-discrepancy
// samples, the best refined by a bounded compass pattern search. If EI is
// zero everywhere the candidate with maximum posterior variance wins, ties
// broken by lowest index.
inline std::vector<double> propose_next(const GPState& state, const BOConfig& config,
                                        std::mt19937_64& rng) {
  auto candidates = detail::halton_candidates(config.bounds, config.candidate_count, rng);
  const double f_best = state.best_observed();

  double best_ei = -1.0;
  double best_var = -1.0;
  std::size_t best_idx = 0;
  std::size_t best_var_idx = 0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    auto stats = state.posterior(candidates[i]);
    double ei = expected_improvement_value(stats.mean, stats.variance, f_best);
    if (ei > best_ei) {
      best_ei = ei;
      best_idx = i;
    }
    if (stats.variance > best_var) {
      best_var = stats.variance;
      best_var_idx = i;
    }
  }
  if (best_ei <= 0.0) return candidates[best_var_idx];

  // Compass search around the incumbent, shrinking steps, budgeted by EI
  // evaluations.
  std::vector<double> x = candidates[best_idx];
  double fx = best_ei;
  std::vector<double> step(config.bounds.size());
  for (std::size_t i = 0; i < step.size(); ++i) step[i] = 0.1 * config.bounds[i].width();
  int evals_left = config.pattern_search_evals;
  while (evals_left > 0) {
    bool improved = false;
    for (std::size_t i = 0; i < x.size() && evals_left > 0; ++i) {
      if (step[i] <= 0.0) continue;
      for (double dir : {+1.0, -1.0}) {
        if (evals_left <= 0) break;
        std::vector<double> y = x;
        y[i] = config.bounds[i].clamp(y[i] + dir * step[i]);
        if (y[i] == x[i]) continue;
        double fy = expected_improvement(state, y, f_best);
        --evals_left;
        if (fy > fx) {
          fx = fy;
          x = std::move(y);
          improved = true;
          break;
        }
      }
    }
    if (!improved) {
      double max_rel = 0.0;
      for (std::size_t i = 0; i < step.size(); ++i) {
        step[i] *= 0.5;
        if (config.bounds[i].width() > 0.0) max_rel = std::max(max_rel, step[i] / config.bounds[i].width());
      }
      if (max_rel < 1e-6) break;
    }
  }
  return x;
}

// Initialization points. The adversarial strategy pre-scans a coarse grid,
// takes the top-tercile NLL threshold and rejection-samples uniform points
// whose own NLL clears it.
inline std::vector<std::vector<double>> init_points(const BOConfig& config,
                                                    const Objective& objective,
                                                    std::mt19937_64& rng) {
  std::vector<std::vector<double>> points;
  points.reserve(config.n_init);
  if (config.init_strategy == InitStrategy::Random) {
    for (int i = 0; i < config.n_init; ++i) points.push_back(detail::uniform_point(config.bounds, rng));
    return points;
  }

  // Coarse pre-scan over the free dimensions.
  std::vector<std::size_t> free_dims;
  for (std::size_t i = 0; i < config.bounds.size(); ++i) {
    if (config.bounds[i].width() > 0.0) free_dims.push_back(i);
  }
  const int res = std::max(2, config.prescan_resolution);
  std::size_t total = 1;
  for (std::size_t f = 0; f < free_dims.size(); ++f) total *= static_cast<std::size_t>(res);
  std::vector<double> scan_nll;
  scan_nll.reserve(total);
  for (std::size_t cell = 0; cell < total; ++cell) {
    std::vector<double> x(config.bounds.size());
    for (std::size_t i = 0; i < config.bounds.size(); ++i) x[i] = config.bounds[i].lo;
    std::size_t rest = cell;
    for (std::size_t f = 0; f < free_dims.size(); ++f) {
      std::size_t idx = rest % res;
      rest /= res;
      std::size_t i = free_dims[f];
      x[i] = config.bounds[i].lo +
             config.bounds[i].width() * static_cast<double>(idx) / static_cast<double>(res - 1);
    }
    scan_nll.push_back(objective(x));
  }
  const double threshold = quantile_of(scan_nll, 2.0 / 3.0);

  for (int i = 0; i < config.n_init; ++i) {
    std::vector<double> best_attempt;
    double best_attempt_nll = -std::numeric_limits<double>::infinity();
    bool kept = false;
    for (int attempt = 0; attempt < 1000; ++attempt) {
      auto x = detail::uniform_point(config.bounds, rng);
      double v = objective(x);
      if (v >= threshold) {
        points.push_back(std::move(x));
        kept = true;
        break;
      }
      if (v > best_attempt_nll) {
        best_attempt_nll = v;
        best_attempt = std::move(x);
      }
    }
    if (!kept) points.push_back(std::move(best_attempt));
  }
  return points;
}

// Algorithm phases: (optional) basis generation, initialization, then the
// EI-driven optimization loop. Runs exactly n_init + budget objective
// evaluations, every one recorded in the trace.
inline BOResult run_boirl(const Objective& objective, BOConfig config) {
  config.check();
  config.kernel.check();
  auto rng = make_rng(config.rng_seed, 0xb0);

  BOResult result;
  auto evaluate = [&](std::span<const double> theta) -> double {
    auto t0 = std::chrono::steady_clock::now();
    double value;
    try {
      value = objective(theta);
    } catch (const std::exception& e) {
      throw BORunError(std::string("run_boirl: objective evaluation failed: ") + e.what(),
                       result.trace);
    }
    if (!std::isfinite(value)) {
      throw BORunError("run_boirl: objective returned a non-finite value", result.trace);
    }
    auto t1 = std::chrono::steady_clock::now();
    TraceRecord rec;
    rec.iteration = static_cast<int>(result.trace.records.size()) + 1;
    rec.theta.assign(theta.begin(), theta.end());
    rec.nll = value;
    rec.wall_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
    if (value < result.best_nll) {
      result.best_nll = value;
      result.best_theta = rec.theta;
    }
    rec.best_nll = result.best_nll;
    rec.best_theta = result.best_theta;
    result.trace.records.push_back(std::move(rec));
    return value;
  };

  std::vector<std::vector<double>> inputs;
  std::vector<double> outputs;
  for (auto& x : init_points(config, objective, rng)) {
    double v = evaluate(x);
    inputs.push_back(std::move(x));
    outputs.push_back(v);
  }

  GPState gp(inputs, outputs, config.kernel, config.gp);
  for (int b = 0; b < config.budget; ++b) {
    if (config.hyper_refit_every > 0 && b % config.hyper_refit_every == 0) {
      double l = select_lengthscale_by_lml(inputs, outputs, config.kernel, config.gp);
      if (l != config.kernel.lengthscale) {
        config.kernel.lengthscale = l;
        gp = GPState(inputs, outputs, config.kernel, config.gp);
      }
    }
    auto theta = propose_next(gp, config, rng);
    // Nudge proposals that collide with an evaluated point; a duplicate row
    // would make the kernel matrix singular at zero noise.
    for (int attempt = 0; attempt < 16; ++attempt) {
      bool duplicate = false;
      for (const auto& seen : inputs) {
        double d = 0.0;
        for (std::size_t i = 0; i < theta.size(); ++i) d += (theta[i] - seen[i]) * (theta[i] - seen[i]);
        if (std::sqrt(d) < config.duplicate_tol) {
          duplicate = true;
          break;
        }
      }
      if (!duplicate) break;
      for (std::size_t i = 0; i < theta.size(); ++i) {
        double w = config.bounds[i].width();
        theta[i] = config.bounds[i].clamp(theta[i] + uniform_in(rng, -1.0, 1.0) * 1e-3 * w);
      }
    }
    double v = evaluate(theta);
    inputs.push_back(std::move(theta));
    outputs.push_back(v);
    gp = GPState(inputs, outputs, config.kernel, config.gp);
  }
  result.gp = std::move(gp);
  return result;
}

// Convenience entry point from an environment: builds the exact-NLL
// objective and, for a rho-RBF kernel without a basis, generates the frozen
// basis from the demonstrations first.
inline BOResult run_boirl(const EnvironmentSpec& env, std::span<const Trajectory> demos,
                          BOConfig config, SoftVIOptions vi = {}) {
  if (config.bounds.empty()) config.bounds = env.theta_bounds;
  if (config.kernel.kind == KernelKind::RhoRbf && !config.kernel.basis) {
    auto basis = std::make_shared<ProjectionBasis>(
        generate_basis(demos, env.mdp, config.basis_k, config.basis_m,
                       config.rng_seed ^ 0x5eedbeefULL));
    config.kernel = make_rho_rbf(env, std::move(basis), config.kernel.lengthscale,
                                 config.kernel.signal_variance);
  } else if (config.kernel.kind != KernelKind::RhoRbf && config.kernel.whiten_bounds.empty()) {
    config.kernel.whiten_bounds = env.theta_bounds;
  }
  auto objective =
      make_nll_objective(env, std::vector<Trajectory>(demos.begin(), demos.end()), vi);
  return run_boirl(objective, std::move(config));
}

}  // namespace boirl

#endif  // BOIRL_BO_HPP
