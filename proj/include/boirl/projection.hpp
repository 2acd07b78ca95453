#ifndef BOIRL_PROJECTION_HPP
#define BOIRL_PROJECTION_HPP

// The rho-projection: per expert trajectory, the softmax weight of the
// trajectory's exponentiated discounted reward against M uniform-policy
// rollouts sharing its start state and length. Stacked across K expert
// trajectories this gives the K-dimensional vector the rho-RBF kernel
// operates on. All softmax arithmetic goes through log-sum-exp; the naive
// form overflows for |R| beyond ~700.

#include <cmath>
#include <fstream>
#include <map>
#include <memory>
#include <numeric>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "boirl/common.hpp"
#include "boirl/envs.hpp"
#include "boirl/mdp.hpp"

namespace boirl {

struct BasisEntry {
  Trajectory expert;
  std::vector<Trajectory> rollouts;
};

// The frozen Z set: K expert trajectories, each paired with M uniform-policy
// rollouts of the same start state and length. Generated once per experiment
// and shared by every kernel evaluation.
struct ProjectionBasis {
  std::vector<BasisEntry> entries;
  double discount = 0.9;

  int k() const { return static_cast<int>(entries.size()); }
  int m() const { return entries.empty() ? 0 : static_cast<int>(entries[0].rollouts.size()); }

  void validate() const {
    if (entries.empty()) throw std::invalid_argument("ProjectionBasis: K must be >= 1");
    for (const auto& entry : entries) {
      if (entry.rollouts.empty()) throw std::invalid_argument("ProjectionBasis: M must be >= 1");
      for (const auto& r : entry.rollouts) {
        if (r.start() != entry.expert.start() || r.length() != entry.expert.length()) {
          throw std::invalid_argument(
              "ProjectionBasis: rollout start state and length must match the expert trajectory");
        }
      }
    }
  }
};

// Phase-1 basis generation: picks K demonstrations without replacement and
// rolls out M uniform-policy trajectories per pick.
inline ProjectionBasis generate_basis(std::span<const Trajectory> demos, const TabularMDP& mdp,
                                      int k, int m, std::uint64_t seed) {
  if (k < 1 || m < 1) throw std::invalid_argument("generate_basis: K and M must be >= 1");
  if (static_cast<std::size_t>(k) > demos.size()) {
    throw std::invalid_argument("generate_basis: K exceeds the number of demonstrations");
  }
  auto rng = make_rng(seed, 0xba515);
  std::vector<std::size_t> order(demos.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = order.size() - 1; i > 0; --i) {
    std::size_t j = rng() % (i + 1);
    std::swap(order[i], order[j]);
  }
  ProjectionBasis basis;
  basis.discount = mdp.discount();
  basis.entries.reserve(k);
  for (int e = 0; e < k; ++e) {
    BasisEntry entry;
    entry.expert = demos[order[e]];
    entry.rollouts.reserve(m);
    for (int i = 0; i < m; ++i) {
      entry.rollouts.push_back(
          sample_trajectory(mdp, nullptr, entry.expert.start(), entry.expert.length(), rng));
    }
    basis.entries.push_back(std::move(entry));
  }
  basis.validate();
  return basis;
}

// Softmax weight of the expert reward against the rollout rewards, computed
// in log space. Strictly inside (0,1) for finite inputs.
inline double rho_from_rewards(double expert_reward, std::span<const double> rollout_rewards) {
  double m = expert_reward;
  for (double r : rollout_rewards) m = std::max(m, r);
  double denom = std::exp(expert_reward - m);
  for (double r : rollout_rewards) denom += std::exp(r - m);
  return std::exp(expert_reward - m) / denom;
}

inline double rho(const RewardTable& reward, const BasisEntry& entry, double discount) {
  double expert = traj_reward(entry.expert, reward, discount);
  std::vector<double> rollouts;
  rollouts.reserve(entry.rollouts.size());
  for (const auto& r : entry.rollouts) rollouts.push_back(traj_reward(r, reward, discount));
  return rho_from_rewards(expert, rollouts);
}

// Precomputed per-trajectory reward summaries for fast repeated scoring of
// one frozen basis at many theta. For the linear family each trajectory
// reduces to its discounted feature sum; for the logistic family to
// discounted visit weights per distinct feature value, since the reward
// depends on the landing state only through that value. Both reproduce
// R_theta(tau) exactly up to summation order.
class TrajectoryScorer {
 public:
  TrajectoryScorer(const ProjectionBasis& basis, const EnvironmentSpec& env)
      : family_(env.family), k_(basis.k()), stride_(basis.m() + 1) {
    basis.validate();
    if (env.kind == EnvKind::Gridworld || family_ == RewardFamily::LogisticState) {
      // Collect the distinct feature values (coin counts).
      std::map<double, int> value_index;
      for (int s = 0; s < env.mdp.n_states(); ++s) value_index.emplace(env.feature(s, 0), 0);
      levels_.reserve(value_index.size());
      for (auto& [v, idx] : value_index) {
        idx = static_cast<int>(levels_.size());
        levels_.push_back(v);
      }
      weights_.assign(static_cast<std::size_t>(k_) * stride_ * levels_.size(), 0.0);
      // Discount mass multiplies the translation term; computed by the same
      // summation for every trajectory so equal lengths give equal masses.
      discount_mass_.assign(static_cast<std::size_t>(k_) * stride_, 0.0);
      std::size_t row = 0;
      for (const auto& entry : basis.entries) {
        accumulate_levels(entry.expert, env, value_index, basis.discount, row++);
        for (const auto& r : entry.rollouts) {
          accumulate_levels(r, env, value_index, basis.discount, row++);
        }
      }
    } else {
      const int d = env.feature_dim;
      feature_sums_.assign(static_cast<std::size_t>(k_) * stride_ * d, 0.0);
      std::size_t row = 0;
      for (const auto& entry : basis.entries) {
        accumulate_features(entry.expert, env, basis.discount, row++);
        for (const auto& r : entry.rollouts) accumulate_features(r, env, basis.discount, row++);
      }
      feature_dim_ = d;
    }
  }

  int k() const { return k_; }
  int m() const { return stride_ - 1; }

  // Rewards of every basis trajectory at theta. Layout: entry-major, expert
  // first, then its rollouts (stride m+1).
  void score_all(const RewardParams& params, std::vector<double>& out) const {
    if (params.family() != family_) {
      throw std::invalid_argument("TrajectoryScorer: params family mismatch");
    }
    const std::size_t rows = static_cast<std::size_t>(k_) * stride_;
    out.resize(rows);
    if (family_ == RewardFamily::LogisticState) {
      const double steepness = params.theta(0);
      const double midpoint = params.theta(1);
      const double translation = params.theta(2);
      std::vector<double> level_reward(levels_.size());
      for (std::size_t l = 0; l < levels_.size(); ++l) {
        level_reward[l] = 10.0 / (1.0 + std::exp(-steepness * (levels_[l] - midpoint)));
      }
      for (std::size_t i = 0; i < rows; ++i) {
        double acc = 0.0;
        const double* w = weights_.data() + i * levels_.size();
        for (std::size_t l = 0; l < levels_.size(); ++l) acc += w[l] * level_reward[l];
        out[i] = acc + translation * discount_mass_[i];
      }
    } else {
      for (std::size_t i = 0; i < rows; ++i) {
        double acc = 0.0;
        const double* f = feature_sums_.data() + i * feature_dim_;
        for (int j = 0; j < feature_dim_; ++j) acc += params.theta(j) * f[j];
        out[i] = acc;
      }
    }
  }

  void rho_vector(const RewardParams& params, std::vector<double>& out,
                  std::vector<double>& scratch) const {
    score_all(params, scratch);
    out.resize(k_);
    for (int e = 0; e < k_; ++e) {
      const double* row = scratch.data() + static_cast<std::size_t>(e) * stride_;
      out[e] = rho_from_rewards(row[0], std::span<const double>(row + 1, stride_ - 1));
    }
  }

  void rho_vector(const RewardParams& params, std::vector<double>& out) const {
    std::vector<double> scratch;
    rho_vector(params, out, scratch);
  }

 private:
  void accumulate_levels(const Trajectory& traj, const EnvironmentSpec& env,
                         const std::map<double, int>& value_index, double gamma, std::size_t row) {
    double g = 1.0;
    double mass = 0.0;
    double* w = weights_.data() + row * levels_.size();
    for (int t = 0; t < traj.length(); ++t) {
      int next = (t + 1 < traj.length()) ? traj.steps[t + 1].first : traj.terminal;
      w[value_index.at(env.feature(next, 0))] += g;
      mass += g;
      g *= gamma;
    }
    discount_mass_[row] = mass;
  }

  void accumulate_features(const Trajectory& traj, const EnvironmentSpec& env, double gamma,
                           std::size_t row) {
    double g = 1.0;
    double* f = feature_sums_.data() + row * env.feature_dim;
    for (int t = 0; t < traj.length(); ++t) {
      int next = (t + 1 < traj.length()) ? traj.steps[t + 1].first : traj.terminal;
      for (int j = 0; j < env.feature_dim; ++j) f[j] += g * env.feature(next, j);
      g *= gamma;
    }
  }

  RewardFamily family_;
  int k_;
  int stride_;
  int feature_dim_ = 0;
  std::vector<double> levels_;
  std::vector<double> weights_;        // [row][level]
  std::vector<double> discount_mass_;  // [row]
  std::vector<double> feature_sums_;   // [row][feature]
};

inline double rho(const RewardParams& params, const BasisEntry& entry,
                  const EnvironmentSpec& env) {
  auto table = eval_reward(params, env);
  return rho(table, entry, env.mdp.discount());
}

inline std::vector<double> rho_vector(const RewardParams& params, const ProjectionBasis& basis,
                                      const EnvironmentSpec& env) {
  TrajectoryScorer scorer(basis, env);
  std::vector<double> out;
  scorer.rho_vector(params, out);
  return out;
}

// --- Basis persistence: JSON-lines, one basis entry per line ---------------

inline void write_basis(std::ostream& os, const ProjectionBasis& basis) {
  nlohmann::json header;
  header["discount"] = basis.discount;
  os << header.dump() << '\n';
  for (const auto& entry : basis.entries) {
    nlohmann::json j;
    j["expert"] = trajectory_to_json(entry.expert);
    auto rollouts = nlohmann::json::array();
    for (const auto& r : entry.rollouts) rollouts.push_back(trajectory_to_json(r));
    j["rollouts"] = std::move(rollouts);
    os << j.dump() << '\n';
  }
}

inline void write_basis(const std::string& path, const ProjectionBasis& basis) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("write_basis: cannot open " + path);
  write_basis(os, basis);
}

inline ProjectionBasis read_basis(std::istream& is) {
  ProjectionBasis basis;
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("read_basis: empty stream");
  basis.discount = nlohmann::json::parse(line).at("discount").get<double>();
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line);
    BasisEntry entry;
    entry.expert = trajectory_from_json(j.at("expert"));
    for (const auto& r : j.at("rollouts")) entry.rollouts.push_back(trajectory_from_json(r));
    basis.entries.push_back(std::move(entry));
  }
  basis.validate();
  return basis;
}

inline ProjectionBasis read_basis(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("read_basis: cannot open " + path);
  return read_basis(is);
}

}  // namespace boirl

#endif  // BOIRL_PROJECTION_HPP
