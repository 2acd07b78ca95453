#ifndef BOIRL_BIRL_HPP
#define BOIRL_BIRL_HPP

// Bayesian IRL baseline: Metropolis-Hastings random walk over the bounded
// parameter box with a uniform prior and likelihood exp(-alpha * NLL).
// Gaussian steps are reflected at the bounds, which keeps the proposal
// symmetric. Each proposal costs one exact policy optimization, so chains
// are far more expensive per useful sample than the BO loop.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <span>
#include <vector>

#include "boirl/bo.hpp"
#include "boirl/common.hpp"
#include "boirl/envs.hpp"

namespace boirl {

struct BIRLConfig {
  int n_samples = 1000;
  int burn_in = -1;  // negative: 10% of n_samples
  double inverse_temperature = 1.0;
  std::vector<double> step_sizes;  // per free coordinate; empty: 5% of bound width
  Bounds bounds;
  std::uint64_t rng_seed = 0;

  int effective_burn_in() const {
    return burn_in >= 0 ? burn_in : n_samples / 10;
  }

  void check() const {
    if (bounds.empty()) throw std::invalid_argument("BIRLConfig: bounds required");
    if (n_samples <= effective_burn_in()) {
      throw std::invalid_argument("BIRLConfig: n_samples must exceed burn_in");
    }
    if (!(inverse_temperature > 0.0)) {
      throw std::invalid_argument("BIRLConfig: inverse temperature must be positive");
    }
    for (double s : step_sizes) {
      if (!(s > 0.0)) throw std::invalid_argument("BIRLConfig: step sizes must be positive");
    }
  }
};

struct BIRLSample {
  std::vector<double> theta;
  double nll = 0.0;
  bool accepted = false;  // whether this step's proposal was accepted
};

struct BIRLResult {
  std::vector<BIRLSample> chain;  // full chain including burn-in
  int burn_in = 0;
  double acceptance_rate = 0.0;

  std::span<const BIRLSample> posterior() const {
    return std::span<const BIRLSample>(chain).subspan(burn_in);
  }
};

inline double reflect_into(double x, const Interval& b) {
  if (b.width() <= 0.0) return b.lo;
  for (int guard = 0; guard < 64; ++guard) {
    if (x < b.lo) {
      x = 2.0 * b.lo - x;
    } else if (x > b.hi) {
      x = 2.0 * b.hi - x;
    } else {
      return x;
    }
  }
  return b.clamp(x);  // pathological step size; fold hard
}

inline BIRLResult run_birl(const Objective& objective, const BIRLConfig& config) {
  config.check();
  auto rng = make_rng(config.rng_seed, 0xb1d);
  const auto d = config.bounds.size();
  std::vector<double> step(d);
  for (std::size_t i = 0; i < d; ++i) {
    step[i] = config.step_sizes.empty() ? 0.05 * config.bounds[i].width()
                                        : config.step_sizes[std::min(i, config.step_sizes.size() - 1)];
  }

  BIRLResult result;
  result.burn_in = config.effective_burn_in();
  result.chain.reserve(config.n_samples);

  std::vector<double> theta = detail::uniform_point(config.bounds, rng);
  double current_nll;
  try {
    current_nll = objective(theta);
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string("run_birl: objective failed at the initial point: ") +
                             e.what());
  }
  long accepted_count = 0;
  for (int t = 0; t < config.n_samples; ++t) {
    std::vector<double> proposal(d);
    for (std::size_t i = 0; i < d; ++i) {
      double x = theta[i] + (step[i] > 0.0 ? step[i] * normal01(rng) : 0.0);
      proposal[i] = reflect_into(x, config.bounds[i]);
    }
    double proposal_nll;
    try {
      proposal_nll = objective(proposal);
    } catch (const std::exception& e) {
      result.acceptance_rate =
          result.chain.empty() ? 0.0 : static_cast<double>(accepted_count) / result.chain.size();
      throw BORunError(std::string("run_birl: objective evaluation failed: ") + e.what(), {});
    }
    double log_accept = -config.inverse_temperature * (proposal_nll - current_nll);
    bool accept = log_accept >= 0.0 || std::log(1.0 - uniform01(rng)) < log_accept;
    if (accept) {
      theta = std::move(proposal);
      current_nll = proposal_nll;
      ++accepted_count;
    }
    result.chain.push_back({theta, current_nll, accept});
  }
  result.acceptance_rate = static_cast<double>(accepted_count) / config.n_samples;
  return result;
}

inline BIRLResult run_birl(const EnvironmentSpec& env, std::span<const Trajectory> demos,
                           BIRLConfig config, SoftVIOptions vi = {}) {
  if (config.bounds.empty()) config.bounds = env.theta_bounds;
  auto objective =
      make_nll_objective(env, std::vector<Trajectory>(demos.begin(), demos.end()), vi);
  return run_birl(objective, config);
}

// CSV dump: idx,theta_0..theta_{d-1},nll,accepted over the full chain.
inline void write_birl_csv(std::ostream& os, const BIRLResult& result) {
  if (result.chain.empty()) return;
  const auto d = result.chain.front().theta.size();
  os << "idx";
  for (std::size_t i = 0; i < d; ++i) os << ",theta_" << i;
  os << ",nll,accepted\n";
  char buf[64];
  for (std::size_t t = 0; t < result.chain.size(); ++t) {
    os << t;
    for (double v : result.chain[t].theta) {
      std::snprintf(buf, sizeof(buf), ",%.17g", v);
      os << buf;
    }
    std::snprintf(buf, sizeof(buf), ",%.17g,%d\n", result.chain[t].nll,
                  result.chain[t].accepted ? 1 : 0);
    os << buf;
  }
}

inline void write_birl_csv(const std::string& path, const BIRLResult& result) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("write_birl_csv: cannot open " + path);
  write_birl_csv(os, result);
}

}  // namespace boirl

#endif  // BOIRL_BIRL_HPP
