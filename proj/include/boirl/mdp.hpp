#ifndef BOIRL_MDP_HPP
#define BOIRL_MDP_HPP

// Tabular MDP core: transition model, soft (Boltzmann) policy optimization,
// trajectory sampling and the maximum-entropy demonstration NLL.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "boirl/common.hpp"

namespace boirl {

struct TransitionOutcome {
  int next = 0;
  double prob = 0.0;
};

// Finite MDP without a reward function. Transitions are stored sparsely as
// per-(state, action) outcome lists; a dense accessor is provided for
// entries outside the support (probability zero).
class TabularMDP {
 public:
  TabularMDP(int n_states, int n_actions, double discount)
      : n_states_(n_states),
        n_actions_(n_actions),
        discount_(discount),
        rows_(static_cast<std::size_t>(n_states) * static_cast<std::size_t>(n_actions)) {
    if (n_states <= 0 || n_actions <= 0) {
      throw std::invalid_argument("TabularMDP: state and action counts must be positive");
    }
    if (!(discount > 0.0 && discount < 1.0)) {
      throw std::invalid_argument("TabularMDP: discount must lie strictly inside (0,1)");
    }
  }

  void add_transition(int s, int a, int next, double prob) {
    check_state(s);
    check_state(next);
    check_action(a);
    if (prob < 0.0) throw std::invalid_argument("TabularMDP: negative transition probability");
    if (prob == 0.0) return;
    auto& row = rows_[index(s, a)];
    for (auto& o : row) {
      if (o.next == next) {
        o.prob += prob;
        return;
      }
    }
    row.push_back({next, prob});
  }

  void add_start_state(int s, double weight) {
    check_state(s);
    if (weight <= 0.0) throw std::invalid_argument("TabularMDP: start weight must be positive");
    start_.push_back({s, weight});
  }

  // Validates the probability-tensor invariants: every (s,a) row sums to one
  // within 1e-12 and start weights sum to one within 1e-12.
  void finalize() {
    if (start_.empty()) throw std::invalid_argument("TabularMDP: no start states");
    for (int s = 0; s < n_states_; ++s) {
      for (int a = 0; a < n_actions_; ++a) {
        const auto& row = rows_[index(s, a)];
        double sum = 0.0;
        for (const auto& o : row) sum += o.prob;
        if (std::abs(sum - 1.0) > 1e-12) {
          std::ostringstream msg;
          msg << "TabularMDP: transition row (s=" << s << ", a=" << a << ") sums to " << sum;
          throw std::invalid_argument(msg.str());
        }
      }
    }
    double wsum = 0.0;
    for (const auto& [s, w] : start_) wsum += w;
    if (std::abs(wsum - 1.0) > 1e-12) {
      throw std::invalid_argument("TabularMDP: start-state weights must sum to 1");
    }
    finalized_ = true;
  }

  int n_states() const { return n_states_; }
  int n_actions() const { return n_actions_; }
  double discount() const { return discount_; }
  bool finalized() const { return finalized_; }

  std::span<const TransitionOutcome> outcomes(int s, int a) const {
    return rows_[index(s, a)];
  }

  double transition_prob(int s, int a, int next) const {
    for (const auto& o : rows_[index(s, a)]) {
      if (o.next == next) return o.prob;
    }
    return 0.0;
  }

  const std::vector<std::pair<int, double>>& start_states() const { return start_; }

  int sample_start(std::mt19937_64& rng) const {
    std::vector<double> w;
    w.reserve(start_.size());
    for (const auto& [s, p] : start_) w.push_back(p);
    return start_[sample_weighted(rng, w)].first;
  }

 private:
  std::size_t index(int s, int a) const {
    return static_cast<std::size_t>(s) * static_cast<std::size_t>(n_actions_) +
           static_cast<std::size_t>(a);
  }
  void check_state(int s) const {
    if (s < 0 || s >= n_states_) throw std::out_of_range("TabularMDP: state index out of range");
  }
  void check_action(int a) const {
    if (a < 0 || a >= n_actions_) throw std::out_of_range("TabularMDP: action index out of range");
  }

  int n_states_;
  int n_actions_;
  double discount_;
  std::vector<std::vector<TransitionOutcome>> rows_;
  std::vector<std::pair<int, double>> start_;
  bool finalized_ = false;
};

// Dense reward tensor R(s,a,s').
class RewardTable {
 public:
  RewardTable(int n_states, int n_actions)
      : n_states_(n_states),
        n_actions_(n_actions),
        values_(static_cast<std::size_t>(n_states) * n_actions * n_states, 0.0) {}

  double& at(int s, int a, int next) { return values_[index(s, a, next)]; }
  double at(int s, int a, int next) const { return values_[index(s, a, next)]; }

  int n_states() const { return n_states_; }
  int n_actions() const { return n_actions_; }

  std::span<const double> raw() const { return values_; }
  std::span<double> raw() { return values_; }

  bool all_finite() const {
    for (double v : values_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

 private:
  std::size_t index(int s, int a, int next) const {
    return (static_cast<std::size_t>(s) * n_actions_ + a) * n_states_ + next;
  }

  int n_states_;
  int n_actions_;
  std::vector<double> values_;
};

// Fixed-length (state, action) sequence plus the state reached after the
// final action.
struct Trajectory {
  std::vector<std::pair<int, int>> steps;
  int terminal = 0;

  int length() const { return static_cast<int>(steps.size()); }
  int start() const {
    if (steps.empty()) throw std::logic_error("Trajectory: empty");
    return steps.front().first;
  }
};

inline void validate_trajectory(const Trajectory& traj, const TabularMDP& mdp) {
  if (traj.steps.empty()) throw std::invalid_argument("Trajectory: length must be >= 1");
  for (int t = 0; t < traj.length(); ++t) {
    auto [s, a] = traj.steps[t];
    int next = (t + 1 < traj.length()) ? traj.steps[t + 1].first : traj.terminal;
    if (mdp.transition_prob(s, a, next) <= 0.0) {
      std::ostringstream msg;
      msg << "Trajectory: step " << t << " transition (" << s << "," << a << ")->" << next
          << " has zero probability";
      throw std::invalid_argument(msg.str());
    }
  }
}

// Boltzmann policy together with the Q-table it was derived from.
// probs row s is the softmax of q row s at the stored temperature.
struct SoftPolicy {
  int n_states = 0;
  int n_actions = 0;
  double temperature = 1.0;
  std::vector<double> probs;      // [s*A + a]
  std::vector<double> log_probs;  // [s*A + a]
  std::vector<double> q_values;   // [s*A + a]

  double prob(int s, int a) const { return probs[static_cast<std::size_t>(s) * n_actions + a]; }
  double log_prob(int s, int a) const {
    return log_probs[static_cast<std::size_t>(s) * n_actions + a];
  }
  double q(int s, int a) const { return q_values[static_cast<std::size_t>(s) * n_actions + a]; }
};

struct SoftVIOptions {
  double tol = 1e-8;
  int max_iter = 10000;
  double temperature = 1.0;
};

struct SoftVIFailure : std::runtime_error {
  double last_residual;
  explicit SoftVIFailure(const std::string& what, double residual)
      : std::runtime_error(what), last_residual(residual) {}
};

namespace detail {

// One Boltzmann backup: out(s,a) = r_exp(s,a) + gamma * sum_{s'} P(s'|s,a) V(s'),
// V(s) = sum_a softmax(Q(s,.)/temp)(a) * Q(s,a). Returns the sup-norm change.
inline double boltzmann_backup(const TabularMDP& mdp, std::span<const double> r_exp,
                               double temperature, const std::vector<double>& q,
                               std::vector<double>& v_buf, std::vector<double>& out) {
  const int S = mdp.n_states();
  const int A = mdp.n_actions();
  for (int s = 0; s < S; ++s) {
    const double* row = q.data() + static_cast<std::size_t>(s) * A;
    double mx = row[0];
    for (int a = 1; a < A; ++a) mx = std::max(mx, row[a]);
    double z = 0.0, acc = 0.0;
    for (int a = 0; a < A; ++a) {
      double w = std::exp((row[a] - mx) / temperature);
      z += w;
      acc += w * row[a];
    }
    v_buf[s] = acc / z;
  }
  const double gamma = mdp.discount();
  double residual = 0.0;
  for (int s = 0; s < S; ++s) {
    for (int a = 0; a < A; ++a) {
      std::size_t i = static_cast<std::size_t>(s) * A + a;
      double ev = 0.0;
      for (const auto& o : mdp.outcomes(s, a)) ev += o.prob * v_buf[o.next];
      double val = r_exp[i] + gamma * ev;
      residual = std::max(residual, std::abs(val - q[i]));
      out[i] = val;
    }
  }
  return residual;
}

}  // namespace detail

// Soft policy optimization: fixed-point iteration of the Boltzmann-operator
// Bellman backup. The reward enters only through its expectation over next
// states, which is centered (midrange removed) before iterating so that
// reward tables differing by a constant follow numerically identical
// iterate paths; the constant is restored in the returned Q. A minimum
// sweep count derived from the gamma-contraction bound keeps the stopping
// iteration itself invariant to such translations. Damping (factor 0.5)
// switches on only if the residual grows on three consecutive sweeps.
inline SoftPolicy soft_value_iteration(const TabularMDP& mdp, const RewardTable& reward,
                                       const SoftVIOptions& opt = {}) {
  if (!mdp.finalized()) throw std::invalid_argument("soft_value_iteration: MDP not finalized");
  if (!(opt.tol > 0.0)) throw std::invalid_argument("soft_value_iteration: tol must be positive");
  if (!(opt.temperature > 0.0)) {
    throw std::invalid_argument("soft_value_iteration: temperature must be positive");
  }
  if (reward.n_states() != mdp.n_states() || reward.n_actions() != mdp.n_actions()) {
    throw std::invalid_argument("soft_value_iteration: reward shape mismatch");
  }

  const int S = mdp.n_states();
  const int A = mdp.n_actions();
  const double gamma = mdp.discount();
  const std::size_t n = static_cast<std::size_t>(S) * A;

  // Expected one-step reward per (s,a).
  std::vector<double> r_exp(n, 0.0);
  double r_min = std::numeric_limits<double>::infinity();
  double r_max = -std::numeric_limits<double>::infinity();
  for (int s = 0; s < S; ++s) {
    for (int a = 0; a < A; ++a) {
      double ev = 0.0;
      for (const auto& o : mdp.outcomes(s, a)) ev += o.prob * reward.at(s, a, o.next);
      if (!std::isfinite(ev)) throw SoftVIFailure("soft_value_iteration: non-finite reward", ev);
      std::size_t i = static_cast<std::size_t>(s) * A + a;
      r_exp[i] = ev;
      r_min = std::min(r_min, ev);
      r_max = std::max(r_max, ev);
    }
  }
  const double center = 0.5 * (r_max + r_min);
  const double span = r_max - r_min;
  for (double& v : r_exp) v -= center;

  // Sweeps needed for the residual to clear tol with margin, assuming the
  // empirical gamma-rate of the backup. The residual check below remains
  // authoritative; this only pins the earliest permissible stop.
  int min_sweeps = 1;
  if (span > 0.0) {
    double target = opt.tol * (1.0 - gamma) / (2.0 * span);
    if (target < 1.0) {
      min_sweeps = static_cast<int>(std::ceil(std::log(target) / std::log(gamma)));
      min_sweeps = std::clamp(min_sweeps, 1, opt.max_iter);
    }
  }

  std::vector<double> q(n, 0.0), q_next(n, 0.0), v_buf(S, 0.0);
  double residual = std::numeric_limits<double>::infinity();
  double prev_residual = residual;
  int rising = 0;
  bool damped = false;
  int iter = 0;
  for (; iter < opt.max_iter; ++iter) {
    residual = detail::boltzmann_backup(mdp, r_exp, opt.temperature, q, v_buf, q_next);
    if (!std::isfinite(residual)) {
      throw SoftVIFailure("soft_value_iteration: non-finite iterate", residual);
    }
    if (iter + 1 >= min_sweeps && residual <= opt.tol) {
      // q (not q_next) is the iterate whose backup residual was just
      // verified; return it.
      break;
    }
    if (residual > prev_residual) {
      if (++rising >= 3) damped = true;
    } else {
      rising = 0;
    }
    prev_residual = residual;
    if (damped) {
      for (std::size_t i = 0; i < n; ++i) q[i] = 0.5 * q[i] + 0.5 * q_next[i];
    } else {
      std::swap(q, q_next);
    }
  }
  if (iter == opt.max_iter) {
    std::ostringstream msg;
    msg << "soft_value_iteration: no convergence after " << opt.max_iter
        << " iterations (residual " << residual << ", tol " << opt.tol << ")";
    throw SoftVIFailure(msg.str(), residual);
  }

  SoftPolicy policy;
  policy.n_states = S;
  policy.n_actions = A;
  policy.temperature = opt.temperature;
  policy.q_values.resize(n);
  policy.probs.resize(n);
  policy.log_probs.resize(n);
  const double shift = center / (1.0 - gamma);
  for (int s = 0; s < S; ++s) {
    const double* row = q.data() + static_cast<std::size_t>(s) * A;
    double mx = row[0];
    for (int a = 1; a < A; ++a) mx = std::max(mx, row[a]);
    double z = 0.0;
    for (int a = 0; a < A; ++a) z += std::exp((row[a] - mx) / opt.temperature);
    double log_z = std::log(z);
    for (int a = 0; a < A; ++a) {
      std::size_t i = static_cast<std::size_t>(s) * A + a;
      policy.log_probs[i] = (row[a] - mx) / opt.temperature - log_z;
      policy.probs[i] = std::exp(policy.log_probs[i]);
      policy.q_values[i] = row[a] + shift;
    }
  }
  return policy;
}

// Eq.-style maxent demonstration NLL: the per-trajectory sum runs to the
// penultimate step (index L-2), so a length-1 trajectory contributes zero.
// Transition log-terms are constant in the reward parameters and can be
// omitted via the flag.
inline double nll(std::span<const Trajectory> demos, const SoftPolicy& policy,
                  const TabularMDP& mdp, bool include_transition_terms = true) {
  if (policy.n_states != mdp.n_states() || policy.n_actions != mdp.n_actions()) {
    throw std::invalid_argument("nll: policy shape does not match MDP");
  }
  double total = 0.0;
  for (const auto& traj : demos) {
    if (traj.steps.empty()) throw std::invalid_argument("nll: empty trajectory");
    for (int t = 0; t + 1 < traj.length(); ++t) {
      auto [s, a] = traj.steps[t];
      int next = traj.steps[t + 1].first;
      total += policy.log_prob(s, a);
      if (include_transition_terms) {
        double p = mdp.transition_prob(s, a, next);
        if (p <= 0.0) {
          throw std::invalid_argument("nll: demonstration step impossible under the model");
        }
        total += std::log(p);
      } else if (mdp.transition_prob(s, a, next) <= 0.0) {
        throw std::invalid_argument("nll: demonstration step impossible under the model");
      }
    }
  }
  return -total;
}

inline double nll(const std::vector<Trajectory>& demos, const SoftPolicy& policy,
                  const TabularMDP& mdp, bool include_transition_terms = true) {
  return nll(std::span<const Trajectory>(demos), policy, mdp, include_transition_terms);
}

// Rolls out `length` steps from `start`. A null policy means the uniform
// policy over actions (used for projection-basis rollouts).
inline Trajectory sample_trajectory(const TabularMDP& mdp, const SoftPolicy* policy, int start,
                                    int length, std::mt19937_64& rng) {
  if (length < 1) throw std::invalid_argument("sample_trajectory: length must be >= 1");
  if (start < 0 || start >= mdp.n_states()) {
    throw std::out_of_range("sample_trajectory: invalid start state");
  }
  const int A = mdp.n_actions();
  Trajectory traj;
  traj.steps.reserve(length);
  int s = start;
  std::vector<double> row(A);
  for (int t = 0; t < length; ++t) {
    int a;
    if (policy == nullptr) {
      a = static_cast<int>(rng() % static_cast<std::uint64_t>(A));
    } else {
      for (int k = 0; k < A; ++k) row[k] = policy->prob(s, k);
      a = static_cast<int>(sample_weighted(rng, row));
    }
    auto outcomes = mdp.outcomes(s, a);
    int next;
    if (outcomes.size() == 1) {
      next = outcomes[0].next;
    } else {
      std::vector<double> p;
      p.reserve(outcomes.size());
      for (const auto& o : outcomes) p.push_back(o.prob);
      next = outcomes[sample_weighted(rng, p)].next;
    }
    traj.steps.push_back({s, a});
    s = next;
  }
  traj.terminal = s;
  return traj;
}

inline Trajectory sample_trajectory(const TabularMDP& mdp, const SoftPolicy* policy, int start,
                                    int length, std::uint64_t seed) {
  auto rng = make_rng(seed);
  return sample_trajectory(mdp, policy, start, length, rng);
}

// Discounted trajectory reward sum_{t=0}^{L-1} gamma^t R(s_t, a_t, s_{t+1}).
inline double traj_reward(const Trajectory& traj, const RewardTable& reward, double gamma) {
  double total = 0.0;
  double g = 1.0;
  for (int t = 0; t < traj.length(); ++t) {
    auto [s, a] = traj.steps[t];
    int next = (t + 1 < traj.length()) ? traj.steps[t + 1].first : traj.terminal;
    total += g * reward.at(s, a, next);
    g *= gamma;
  }
  return total;
}

// --- Trajectory persistence: JSON-lines, one trajectory per line ---------

inline nlohmann::json trajectory_to_json(const Trajectory& traj) {
  nlohmann::json j;
  j["start"] = traj.start();
  auto steps = nlohmann::json::array();
  for (const auto& [s, a] : traj.steps) steps.push_back({s, a});
  j["steps"] = std::move(steps);
  j["terminal"] = traj.terminal;
  return j;
}

inline Trajectory trajectory_from_json(const nlohmann::json& j) {
  Trajectory traj;
  for (const auto& step : j.at("steps")) {
    traj.steps.push_back({step.at(0).get<int>(), step.at(1).get<int>()});
  }
  traj.terminal = j.at("terminal").get<int>();
  if (traj.steps.empty()) throw std::invalid_argument("trajectory_from_json: empty steps");
  if (j.contains("start") && j.at("start").get<int>() != traj.start()) {
    throw std::invalid_argument("trajectory_from_json: start field inconsistent with steps");
  }
  return traj;
}

inline void write_trajectories(std::ostream& os, std::span<const Trajectory> trajs) {
  for (const auto& t : trajs) os << trajectory_to_json(t).dump() << '\n';
}

inline void write_trajectories(const std::string& path, std::span<const Trajectory> trajs) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("write_trajectories: cannot open " + path);
  write_trajectories(os, trajs);
}

inline std::vector<Trajectory> read_trajectories(std::istream& is) {
  std::vector<Trajectory> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    out.push_back(trajectory_from_json(nlohmann::json::parse(line)));
  }
  return out;
}

inline std::vector<Trajectory> read_trajectories(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("read_trajectories: cannot open " + path);
  return read_trajectories(is);
}

}  // namespace boirl

#endif  // BOIRL_MDP_HPP
