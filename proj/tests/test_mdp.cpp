#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <vector>

#include "boirl/envs.hpp"
#include "boirl/mdp.hpp"

using namespace boirl;

namespace {

// Independent high-precision fixed point of the Boltzmann backup: damped
// iteration from a given start until the sup-norm change is tiny. Used as
// the oracle for soft_value_iteration.
std::vector<double> boltzmann_fixed_point_oracle(const TabularMDP& mdp, const RewardTable& reward,
                                                 std::vector<double> q, double damping,
                                                 double tol = 1e-13, int max_iter = 2000000) {
  const int S = mdp.n_states();
  const int A = mdp.n_actions();
  std::vector<double> v(S), next(q.size());
  for (int iter = 0; iter < max_iter; ++iter) {
    for (int s = 0; s < S; ++s) {
      const double* row = q.data() + static_cast<std::size_t>(s) * A;
      double mx = *std::max_element(row, row + A);
      double z = 0.0, acc = 0.0;
      for (int a = 0; a < A; ++a) {
        double w = std::exp(row[a] - mx);
        z += w;
        acc += w * row[a];
      }
      v[s] = acc / z;
    }
    double delta = 0.0;
    for (int s = 0; s < S; ++s) {
      for (int a = 0; a < A; ++a) {
        double ev = 0.0;
        for (const auto& o : mdp.outcomes(s, a)) {
          ev += o.prob * (reward.at(s, a, o.next) + mdp.discount() * v[o.next]);
        }
        std::size_t i = static_cast<std::size_t>(s) * A + a;
        next[i] = (1.0 - damping) * ev + damping * q[i];
        delta = std::max(delta, std::abs(next[i] - q[i]));
      }
    }
    q.swap(next);
    if (delta <= tol) return q;
  }
  FAIL("fixed-point oracle did not converge");
  return q;
}

TabularMDP single_state_self_loop(double gamma) {
  TabularMDP mdp(1, 1, gamma);
  mdp.add_transition(0, 0, 0, 1.0);
  mdp.add_start_state(0, 1.0);
  mdp.finalize();
  return mdp;
}

TabularMDP two_state_deterministic(double gamma) {
  // Action 0 stays, action 1 moves to the other state.
  TabularMDP mdp(2, 2, gamma);
  mdp.add_transition(0, 0, 0, 1.0);
  mdp.add_transition(0, 1, 1, 1.0);
  mdp.add_transition(1, 0, 1, 1.0);
  mdp.add_transition(1, 1, 0, 1.0);
  mdp.add_start_state(0, 1.0);
  mdp.finalize();
  return mdp;
}

RewardTable constant_table(const TabularMDP& mdp, double value) {
  RewardTable table(mdp.n_states(), mdp.n_actions());
  for (double& v : table.raw()) v = value;
  return table;
}

TabularMDP random_mdp(std::mt19937_64& rng, int n_states, int n_actions, double gamma) {
  TabularMDP mdp(n_states, n_actions, gamma);
  for (int s = 0; s < n_states; ++s) {
    for (int a = 0; a < n_actions; ++a) {
      // Sparse random kernel over up to 4 successors.
      int support = 1 + static_cast<int>(rng() % 4);
      std::vector<int> nexts(support);
      std::vector<double> w(support);
      double total = 0.0;
      for (int i = 0; i < support; ++i) {
        nexts[i] = static_cast<int>(rng() % n_states);
        w[i] = 0.1 + uniform01(rng);
        total += w[i];
      }
      // Exact row normalization: assign the remainder to the last entry.
      double acc = 0.0;
      for (int i = 0; i + 1 < support; ++i) {
        w[i] /= total;
        acc += w[i];
        mdp.add_transition(s, a, nexts[i], w[i]);
      }
      mdp.add_transition(s, a, nexts[support - 1], 1.0 - acc);
    }
  }
  mdp.add_start_state(0, 1.0);
  mdp.finalize();
  return mdp;
}

RewardTable random_table(std::mt19937_64& rng, const TabularMDP& mdp, double scale) {
  RewardTable table(mdp.n_states(), mdp.n_actions());
  for (double& v : table.raw()) v = scale * (uniform01(rng) - 0.5);
  return table;
}

}  // namespace

TEST_CASE("TabularMDP enforces its invariants") {
  CHECK_THROWS_AS(TabularMDP(2, 2, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(TabularMDP(2, 2, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(TabularMDP(0, 2, 0.9), std::invalid_argument);

  TabularMDP mdp(2, 1, 0.9);
  mdp.add_transition(0, 0, 1, 0.5);
  mdp.add_start_state(0, 1.0);
  CHECK_THROWS_AS(mdp.finalize(), std::invalid_argument);  // row sums to 0.5
  mdp.add_transition(0, 0, 0, 0.5);
  mdp.add_transition(1, 0, 1, 1.0);
  CHECK_NOTHROW(mdp.finalize());
  CHECK(mdp.transition_prob(0, 0, 1) == 0.5);
  CHECK(mdp.transition_prob(1, 0, 0) == 0.0);
}

TEST_CASE("soft_value_iteration: deterministic self-loop gives geometric series") {
  const double gamma = 0.9;
  const double r = 2.5;
  auto mdp = single_state_self_loop(gamma);
  auto table = constant_table(mdp, r);
  auto policy = soft_value_iteration(mdp, table);
  CHECK(policy.prob(0, 0) == Catch::Approx(1.0));
  CHECK(policy.q(0, 0) == Catch::Approx(r / (1.0 - gamma)).epsilon(1e-9));
}

TEST_CASE("soft_value_iteration matches a damped fixed-point oracle") {
  const double gamma = 0.9;
  auto mdp = two_state_deterministic(gamma);
  RewardTable table(2, 2);
  table.at(0, 0, 0) = 1.0;
  table.at(0, 1, 1) = -0.5;
  table.at(1, 0, 1) = 0.25;
  table.at(1, 1, 0) = 2.0;

  SoftVIOptions opt;
  opt.tol = 1e-12;
  auto policy = soft_value_iteration(mdp, table, opt);

  // Oracle from several starts and damping levels must agree with itself
  // and with the implementation.
  std::vector<std::vector<double>> starts = {
      {0.0, 0.0, 0.0, 0.0}, {10.0, -10.0, 5.0, 1.0}, {-3.0, 4.0, -1.0, 0.5}};
  for (double damping : {0.0, 0.5}) {
    for (const auto& q0 : starts) {
      auto q_star = boltzmann_fixed_point_oracle(mdp, table, q0, damping);
      for (int s = 0; s < 2; ++s) {
        for (int a = 0; a < 2; ++a) {
          CHECK(policy.q(s, a) == Catch::Approx(q_star[s * 2 + a]).margin(1e-10));
        }
      }
    }
  }
}

TEST_CASE("soft_value_iteration residual at return is within tol") {
  auto rng = make_rng(7);
  for (int rep = 0; rep < 5; ++rep) {
    auto mdp = random_mdp(rng, 12, 3, 0.9);
    auto table = random_table(rng, mdp, 4.0);
    SoftVIOptions opt;
    auto policy = soft_value_iteration(mdp, table, opt);
    // Recompute one Boltzmann backup at the returned Q.
    const int S = mdp.n_states(), A = mdp.n_actions();
    std::vector<double> v(S);
    for (int s = 0; s < S; ++s) {
      double acc = 0.0;
      for (int a = 0; a < A; ++a) acc += policy.prob(s, a) * policy.q(s, a);
      v[s] = acc;
    }
    double residual = 0.0;
    for (int s = 0; s < S; ++s) {
      for (int a = 0; a < A; ++a) {
        double ev = 0.0;
        for (const auto& o : mdp.outcomes(s, a)) {
          ev += o.prob * (table.at(s, a, o.next) + mdp.discount() * v[o.next]);
        }
        residual = std::max(residual, std::abs(ev - policy.q(s, a)));
      }
    }
    CHECK(residual <= opt.tol * (1.0 + 1e-6));
  }
}

TEST_CASE("soft_value_iteration: PBRS shaping leaves the policy unchanged") {
  auto rng = make_rng(11);
  auto mdp = random_mdp(rng, 20, 4, 0.92);
  auto table = random_table(rng, mdp, 3.0);
  std::vector<double> potential(20);
  for (double& p : potential) p = 4.0 * (uniform01(rng) - 0.5);
  auto shaped = shape_reward(table, potential, mdp.discount());

  SoftVIOptions opt;
  opt.tol = 1e-11;
  auto base = soft_value_iteration(mdp, table, opt);
  auto after = soft_value_iteration(mdp, shaped, opt);
  for (int s = 0; s < 20; ++s) {
    for (int a = 0; a < 4; ++a) {
      CHECK(after.prob(s, a) == Catch::Approx(base.prob(s, a)).margin(1e-8));
      CHECK(after.q(s, a) - base.q(s, a) == Catch::Approx(-potential[s]).margin(1e-8));
    }
  }
}

TEST_CASE("nll: single-action deterministic chain has zero NLL") {
  TabularMDP mdp(3, 1, 0.9);
  mdp.add_transition(0, 0, 1, 1.0);
  mdp.add_transition(1, 0, 2, 1.0);
  mdp.add_transition(2, 0, 2, 1.0);
  mdp.add_start_state(0, 1.0);
  mdp.finalize();
  auto policy = soft_value_iteration(mdp, constant_table(mdp, 0.0));
  Trajectory traj;
  traj.steps = {{0, 0}, {1, 0}, {2, 0}};
  traj.terminal = 2;
  std::vector<Trajectory> demos = {traj};
  CHECK(nll(demos, policy, mdp) == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("nll matches a direct per-step oracle on a stochastic MDP") {
  auto rng = make_rng(23);
  auto mdp = random_mdp(rng, 2, 2, 0.9);
  auto table = random_table(rng, mdp, 2.0);
  auto policy = soft_value_iteration(mdp, table);
  std::vector<Trajectory> demos;
  for (int i = 0; i < 3; ++i) {
    demos.push_back(sample_trajectory(mdp, &policy, 0, 3, rng));
  }

  for (bool with_transitions : {true, false}) {
    double expected = 0.0;
    for (const auto& traj : demos) {
      const int L = traj.length();
      for (int t = 0; t <= L - 2; ++t) {
        auto [s, a] = traj.steps[t];
        expected -= std::log(policy.prob(s, a));
        if (with_transitions) {
          expected -= std::log(mdp.transition_prob(s, a, traj.steps[t + 1].first));
        }
      }
    }
    CHECK(nll(demos, policy, mdp, with_transitions) == Catch::Approx(expected).margin(1e-12));
  }
}

TEST_CASE("nll decomposes over demonstrations and rejects impossible steps") {
  auto rng = make_rng(29);
  auto mdp = random_mdp(rng, 6, 3, 0.9);
  auto table = random_table(rng, mdp, 2.0);
  auto policy = soft_value_iteration(mdp, table);
  std::vector<Trajectory> demos;
  for (int i = 0; i < 4; ++i) demos.push_back(sample_trajectory(mdp, &policy, 0, 5, rng));
  double sum = 0.0;
  for (const auto& d : demos) {
    std::vector<Trajectory> one = {d};
    sum += nll(one, policy, mdp);
  }
  CHECK(nll(demos, policy, mdp) == Catch::Approx(sum).margin(1e-10));

  // A step with zero transition probability must be rejected.
  Trajectory bad = demos[0];
  bool found = false;
  for (int next = 0; next < mdp.n_states() && !found; ++next) {
    if (mdp.transition_prob(bad.steps[0].first, bad.steps[0].second, next) == 0.0) {
      bad.steps[1].first = next;
      found = true;
    }
  }
  if (found) {
    std::vector<Trajectory> bad_demos = {bad};
    CHECK_THROWS_AS(nll(bad_demos, policy, mdp), std::invalid_argument);
  }
}

TEST_CASE("nll is exactly invariant to constant reward translation") {
  auto rng = make_rng(31);
  auto mdp = random_mdp(rng, 10, 3, 0.9);
  auto table = random_table(rng, mdp, 3.0);
  auto policy = soft_value_iteration(mdp, table);
  std::vector<Trajectory> demos;
  for (int i = 0; i < 10; ++i) demos.push_back(sample_trajectory(mdp, &policy, 0, 8, rng));
  double base = nll(demos, policy, mdp);
  for (double c : {0.5, -2.0, 3.75}) {
    auto shifted = table;
    for (double& v : shifted.raw()) v += c;
    auto policy_c = soft_value_iteration(mdp, shifted);
    CHECK(nll(demos, policy_c, mdp) == Catch::Approx(base).margin(1e-10));
  }
}

TEST_CASE("sample_trajectory: deterministic chain, reproducibility, frequencies") {
  TabularMDP chain(5, 1, 0.9);
  for (int s = 0; s < 5; ++s) chain.add_transition(s, 0, std::min(s + 1, 4), 1.0);
  chain.add_start_state(0, 1.0);
  chain.finalize();
  auto traj = sample_trajectory(chain, nullptr, 0, 4, std::uint64_t{1});
  REQUIRE(traj.length() == 4);
  for (int t = 0; t < 4; ++t) CHECK(traj.steps[t].first == t);
  CHECK(traj.terminal == 4);
  validate_trajectory(traj, chain);

  auto mdp = two_state_deterministic(0.9);
  auto a = sample_trajectory(mdp, nullptr, 0, 12, std::uint64_t{99});
  auto b = sample_trajectory(mdp, nullptr, 0, 12, std::uint64_t{99});
  CHECK(a.steps == b.steps);
  CHECK(a.terminal == b.terminal);

  // Uniform policy on a 2-action MDP: empirical start-action frequency.
  auto rng = make_rng(5);
  int count = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    auto t = sample_trajectory(mdp, nullptr, 0, 1, rng);
    if (t.steps[0].second == 0) ++count;
  }
  CHECK(std::abs(count / static_cast<double>(n) - 0.5) < 0.01);
}

TEST_CASE("traj_reward: zero, geometric and shaped-telescoping cases") {
  auto mdp = two_state_deterministic(0.9);
  auto rng = make_rng(41);
  auto traj = sample_trajectory(mdp, nullptr, 0, 6, rng);

  CHECK(traj_reward(traj, constant_table(mdp, 0.0), 0.9) == 0.0);

  const double c = 1.7, gamma = 0.9;
  const int L = traj.length();
  double geometric = c * (1.0 - std::pow(gamma, L)) / (1.0 - gamma);
  CHECK(traj_reward(traj, constant_table(mdp, c), gamma) == Catch::Approx(geometric).epsilon(1e-12));

  // Appendix-style telescoping: shaped minus unshaped equals
  // gamma^L phi(s_L) - phi(s_0).
  auto table = random_table(rng, mdp, 2.0);
  std::vector<double> potential = {0.8, -1.3};
  auto shaped = shape_reward(table, potential, gamma);
  double diff = traj_reward(traj, shaped, gamma) - traj_reward(traj, table, gamma);
  double expected = std::pow(gamma, L) * potential[traj.terminal] - potential[traj.start()];
  CHECK(diff == Catch::Approx(expected).margin(1e-12));
}

TEST_CASE("trajectory JSON-lines round trip") {
  auto mdp = two_state_deterministic(0.9);
  auto rng = make_rng(43);
  std::vector<Trajectory> trajs;
  for (int i = 0; i < 7; ++i) trajs.push_back(sample_trajectory(mdp, nullptr, i % 2, 5, rng));
  std::stringstream buffer;
  write_trajectories(buffer, trajs);
  auto loaded = read_trajectories(buffer);
  REQUIRE(loaded.size() == trajs.size());
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    CHECK(loaded[i].steps == trajs[i].steps);
    CHECK(loaded[i].terminal == trajs[i].terminal);
  }
  // Byte-deterministic writes.
  std::stringstream again;
  write_trajectories(again, loaded);
  CHECK(again.str() == buffer.str());
}
