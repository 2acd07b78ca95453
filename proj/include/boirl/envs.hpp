#ifndef BOIRL_ENVS_HPP
#define BOIRL_ENVS_HPP

// Concrete environments: a 6x6 coin Gridworld with a translated-logistic
// state reward, and a synthetic road network whose states are link pairs
// s(a,b) with a linear reward over four link features. Also holds the
// reward evaluation for both families and PBRS shaping.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "boirl/common.hpp"
#include "boirl/mdp.hpp"
#include "boirl/reward.hpp"

namespace boirl {

enum class EnvKind { Gridworld, RoadNetwork };

inline std::string to_string(EnvKind kind) {
  return kind == EnvKind::Gridworld ? "gridworld" : "roadnet";
}

struct EnvironmentSpec {
  EnvKind kind = EnvKind::Gridworld;
  TabularMDP mdp;
  RewardFamily family = RewardFamily::LogisticState;
  int feature_dim = 1;
  std::vector<double> state_features;  // [s * feature_dim + j]
  Bounds theta_bounds;
  std::optional<RewardParams> ground_truth;

  double feature(int s, int j) const {
    return state_features[static_cast<std::size_t>(s) * feature_dim + j];
  }

  void validate() const {
    if (state_features.size() !=
        static_cast<std::size_t>(mdp.n_states()) * static_cast<std::size_t>(feature_dim)) {
      throw std::invalid_argument("EnvironmentSpec: feature array shape mismatch");
    }
    if (family == RewardFamily::LogisticState && theta_bounds.size() != 3) {
      throw std::invalid_argument("EnvironmentSpec: logistic-state family needs d=3 bounds");
    }
    if (family == RewardFamily::LinearFeatures &&
        theta_bounds.size() != static_cast<std::size_t>(feature_dim)) {
      throw std::invalid_argument("EnvironmentSpec: linear family bounds must match feature dim");
    }
  }
};

// Per-state reward value of a parameterised family. The reward table places
// this value on the landing state: R(s,a,s') = v(s').
inline std::vector<double> state_reward_values(const RewardParams& params,
                                               const EnvironmentSpec& env) {
  if (params.family() != env.family) {
    throw std::invalid_argument("eval_reward: params family does not match environment");
  }
  const int S = env.mdp.n_states();
  std::vector<double> values(S, 0.0);
  if (env.family == RewardFamily::LogisticState) {
    const double steepness = params.theta(0);
    const double midpoint = params.theta(1);
    const double translation = params.theta(2);
    for (int s = 0; s < S; ++s) {
      double psi = env.feature(s, 0);
      values[s] = 10.0 / (1.0 + std::exp(-steepness * (psi - midpoint))) + translation;
    }
  } else {
    for (int s = 0; s < S; ++s) {
      double acc = 0.0;
      for (int j = 0; j < env.feature_dim; ++j) acc += params.theta(j) * env.feature(s, j);
      values[s] = acc;
    }
  }
  for (double v : values) {
    if (!std::isfinite(v)) throw std::runtime_error("eval_reward: non-finite reward value");
  }
  return values;
}

inline RewardTable eval_reward(const RewardParams& params, const EnvironmentSpec& env) {
  const auto values = state_reward_values(params, env);
  const int S = env.mdp.n_states();
  const int A = env.mdp.n_actions();
  RewardTable table(S, A);
  for (int s = 0; s < S; ++s) {
    for (int a = 0; a < A; ++a) {
      for (int next = 0; next < S; ++next) table.at(s, a, next) = values[next];
    }
  }
  return table;
}

// Potential-based shaping: R'(s,a,s') = R(s,a,s') + gamma*phi(s') - phi(s).
inline RewardTable shape_reward(const RewardTable& reward, std::span<const double> potential,
                                double gamma) {
  const int S = reward.n_states();
  const int A = reward.n_actions();
  if (potential.size() != static_cast<std::size_t>(S)) {
    throw std::invalid_argument("shape_reward: potential size must equal state count");
  }
  for (double p : potential) {
    if (!std::isfinite(p)) throw std::invalid_argument("shape_reward: non-finite potential");
  }
  RewardTable shaped(S, A);
  for (int s = 0; s < S; ++s) {
    for (int a = 0; a < A; ++a) {
      for (int next = 0; next < S; ++next) {
        shaped.at(s, a, next) = reward.at(s, a, next) + gamma * potential[next] - potential[s];
      }
    }
  }
  return shaped;
}

// --- Gridworld ------------------------------------------------------------

struct GridworldLayout {
  int width = 6;
  int height = 6;
  std::vector<int> coins;  // per cell, row-major
};

inline GridworldLayout default_gridworld_layout(std::uint64_t seed = 0, int width = 6,
                                                int height = 6) {
  GridworldLayout layout;
  layout.width = width;
  layout.height = height;
  auto rng = make_rng(seed, 0xc01);
  layout.coins.resize(static_cast<std::size_t>(width) * height);
  for (auto& c : layout.coins) c = static_cast<int>(rng() % 9);  // coin counts 0..8
  return layout;
}

inline GridworldLayout gridworld_layout_from_json(const nlohmann::json& j) {
  GridworldLayout layout;
  layout.width = j.at("width").get<int>();
  layout.height = j.at("height").get<int>();
  layout.coins = j.at("coins").get<std::vector<int>>();
  return layout;
}

inline nlohmann::json gridworld_layout_to_json(const GridworldLayout& layout) {
  return {{"width", layout.width}, {"height", layout.height}, {"coins", layout.coins}};
}

inline GridworldLayout load_gridworld_layout(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("load_gridworld_layout: cannot open " + path);
  nlohmann::json j;
  is >> j;
  return gridworld_layout_from_json(j);
}

// 4 compass actions, deterministic moves, walls clamp the position.
inline EnvironmentSpec build_gridworld(const GridworldLayout& layout, double gamma = 0.9) {
  const int W = layout.width;
  const int H = layout.height;
  if (W <= 0 || H <= 0 || layout.coins.size() != static_cast<std::size_t>(W) * H) {
    throw std::invalid_argument("build_gridworld: invalid layout dimensions");
  }
  for (int c : layout.coins) {
    if (c < 0) throw std::invalid_argument("build_gridworld: negative coin count");
  }
  const int S = W * H;
  const int A = 4;
  TabularMDP mdp(S, A, gamma);
  constexpr int dx[4] = {0, 1, 0, -1};  // up, right, down, left
  constexpr int dy[4] = {-1, 0, 1, 0};
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      int s = y * W + x;
      for (int a = 0; a < A; ++a) {
        int nx = std::clamp(x + dx[a], 0, W - 1);
        int ny = std::clamp(y + dy[a], 0, H - 1);
        mdp.add_transition(s, a, ny * W + nx, 1.0);
      }
      mdp.add_start_state(s, 1.0 / static_cast<double>(S));
    }
  }
  mdp.finalize();

  EnvironmentSpec env{EnvKind::Gridworld, std::move(mdp), RewardFamily::LogisticState, 1, {}, {}, {}};
  env.state_features.resize(S);
  for (int s = 0; s < S; ++s) env.state_features[s] = static_cast<double>(layout.coins[s]);
  env.theta_bounds = {{-2.0, 2.0}, {-10.0, 10.0}, {-4.0, 4.0}};
  env.ground_truth = RewardParams({1.25, 5.0, 0.0}, RewardFamily::LogisticState, env.theta_bounds);
  env.validate();
  return env;
}

// --- Road network ----------------------------------------------------------

// One link-to-link adjacency and the features of landing on `to`.
struct RoadAdjacency {
  int from = 0;
  int to = 0;
  double traverse_time = 0.0;
  bool right_turn = false;
  bool u_turn = false;
};

struct RoadNetworkGraph {
  int n_links = 0;    // including the dummy sink link
  int dummy_link = -1;
  std::vector<RoadAdjacency> adjacencies;          // grouped by `from`, in action order
  std::vector<std::vector<int>> successor_index;   // per link: indices into adjacencies

  void rebuild_index() {
    successor_index.assign(n_links, {});
    for (std::size_t i = 0; i < adjacencies.size(); ++i) {
      successor_index[adjacencies[i].from].push_back(static_cast<int>(i));
    }
  }

  void validate() const {
    if (dummy_link < 0 || dummy_link >= n_links) {
      throw std::invalid_argument("RoadNetworkGraph: missing dummy sink link");
    }
    for (int l = 0; l < n_links; ++l) {
      int real_successors = 0;
      for (int idx : successor_index[l]) {
        if (adjacencies[idx].to != dummy_link) ++real_successors;
      }
      if (real_successors > 5) {
        std::ostringstream msg;
        msg << "RoadNetworkGraph: link " << l << " has " << real_successors
            << " successors; at most 5 allowed";
        throw std::invalid_argument(msg.str());
      }
    }
    if (!successor_index[dummy_link].empty()) {
      throw std::invalid_argument("RoadNetworkGraph: dummy link must have no successors");
    }
  }
};

namespace detail {

inline double wrap_angle(double a) {
  while (a <= -M_PI) a += 2.0 * M_PI;
  while (a > M_PI) a -= 2.0 * M_PI;
  return a;
}

}  // namespace detail

// Random connected road network: junctions placed in the unit square, each
// undirected street becomes two directed links. Junction degree is capped
// at 5 so every link has at most 5 successor links. A dummy sink link is
// attached to one destination link. `n_links` is rounded up to an even
// count of real links.
inline RoadNetworkGraph generate_roadnet(int n_links, std::uint64_t seed) {
  if (n_links < 6) throw std::invalid_argument("generate_roadnet: need at least 6 links");
  auto rng = make_rng(seed, 0x70ad);
  const int n_edges = (n_links + 1) / 2;
  const int n_junctions = std::max(4, (2 * n_edges + 2) / 3);

  std::vector<double> px(n_junctions), py(n_junctions);
  for (int j = 0; j < n_junctions; ++j) {
    px[j] = uniform01(rng);
    py[j] = uniform01(rng);
  }

  std::vector<int> degree(n_junctions, 0);
  std::vector<std::pair<int, int>> edges;
  auto connected = [&](int u, int v) {
    for (auto [a, b] : edges) {
      if ((a == u && b == v) || (a == v && b == u)) return true;
    }
    return false;
  };
  // Spanning tree: attach each junction to its nearest predecessor with
  // spare degree.
  for (int j = 1; j < n_junctions; ++j) {
    int best = -1;
    double best_d = std::numeric_limits<double>::infinity();
    for (int k = 0; k < j; ++k) {
      if (degree[k] >= 5) continue;
      double d = std::hypot(px[j] - px[k], py[j] - py[k]);
      if (d < best_d) {
        best_d = d;
        best = k;
      }
    }
    if (best < 0) throw std::runtime_error("generate_roadnet: could not build spanning tree");
    edges.push_back({j, best});
    ++degree[j];
    ++degree[best];
  }
  // Densify with the shortest valid extra streets.
  while (static_cast<int>(edges.size()) < n_edges) {
    int bu = -1, bv = -1;
    double best_d = std::numeric_limits<double>::infinity();
    for (int u = 0; u < n_junctions; ++u) {
      if (degree[u] >= 5) continue;
      for (int v = u + 1; v < n_junctions; ++v) {
        if (degree[v] >= 5 || connected(u, v)) continue;
        double d = std::hypot(px[u] - px[v], py[u] - py[v]);
        if (d < best_d) {
          best_d = d;
          bu = u;
          bv = v;
        }
      }
    }
    if (bu < 0) break;  // degree caps exhausted; fewer links than requested
    edges.push_back({bu, bv});
    ++degree[bu];
    ++degree[bv];
  }

  struct Link {
    int tail, head;
    double time, angle;
  };
  std::vector<Link> links;
  std::vector<int> reverse_of;
  for (auto [u, v] : edges) {
    double d = std::hypot(px[v] - px[u], py[v] - py[u]);
    double t = 0.1 + 2.0 * d;
    double ang_uv = std::atan2(py[v] - py[u], px[v] - px[u]);
    int i = static_cast<int>(links.size());
    links.push_back({u, v, t, ang_uv});
    links.push_back({v, u, t, detail::wrap_angle(ang_uv + M_PI)});
    reverse_of.push_back(i + 1);
    reverse_of.push_back(i);
  }
  const int n_real = static_cast<int>(links.size());

  RoadNetworkGraph graph;
  graph.n_links = n_real + 1;
  graph.dummy_link = n_real;
  const int dest = static_cast<int>(rng() % static_cast<std::uint64_t>(n_real));

  for (int a = 0; a < n_real; ++a) {
    // Successors of link a: all out-links at its head junction, rightmost
    // turn first (most clockwise relative angle).
    struct Cand {
      int to;
      double delta;
    };
    std::vector<Cand> cands;
    for (int b = 0; b < n_real; ++b) {
      if (links[b].tail != links[a].head) continue;
      double delta = detail::wrap_angle(links[b].angle - links[a].angle);
      cands.push_back({b, delta});
    }
    std::sort(cands.begin(), cands.end(), [](const Cand& x, const Cand& y) {
      if (x.delta != y.delta) return x.delta < y.delta;
      return x.to < y.to;
    });
    for (const auto& c : cands) {
      bool u_turn = (c.to == reverse_of[a]);
      bool right = !u_turn && c.delta < -0.0873;  // more than ~5 degrees clockwise
      graph.adjacencies.push_back({a, c.to, links[c.to].time, right, u_turn});
    }
    if (a == dest) {
      // Trip termination: the dummy link hangs off the destination.
      graph.adjacencies.push_back({a, graph.dummy_link, 0.0, false, false});
    }
  }
  graph.rebuild_index();
  graph.validate();
  return graph;
}

// Edge-list CSV: `src_link,dst_link,traverse_time,right_turn,u_turn` with
// flags as 1=yes/0=no, plus one `sink,<link_id>` line naming the dummy
// link. Row order defines the action order of each link's successors.
inline void write_edge_list(const RoadNetworkGraph& graph, std::ostream& os) {
  os << "src_link,dst_link,traverse_time,right_turn,u_turn\n";
  os << "sink," << graph.dummy_link << "\n";
  char buf[128];
  for (int l = 0; l < graph.n_links; ++l) {
    for (int idx : graph.successor_index[l]) {
      const auto& adj = graph.adjacencies[idx];
      std::snprintf(buf, sizeof(buf), "%d,%d,%.17g,%d,%d\n", adj.from, adj.to, adj.traverse_time,
                    adj.right_turn ? 1 : 0, adj.u_turn ? 1 : 0);
      os << buf;
    }
  }
}

inline void write_edge_list(const RoadNetworkGraph& graph, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("write_edge_list: cannot open " + path);
  write_edge_list(graph, os);
}

inline RoadNetworkGraph parse_edge_list(std::istream& is) {
  RoadNetworkGraph graph;
  graph.dummy_link = -1;
  std::string line;
  int max_link = -1;
  bool header_seen = false;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (!header_seen && line.rfind("src_link", 0) == 0) {
      header_seen = true;
      continue;
    }
    std::istringstream row(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(row, field, ',')) fields.push_back(field);
    if (!fields.empty() && fields[0] == "sink") {
      if (fields.size() < 2 || graph.dummy_link >= 0) {
        throw std::invalid_argument("parse_edge_list: malformed or duplicate sink line");
      }
      graph.dummy_link = std::stoi(fields[1]);
      max_link = std::max(max_link, graph.dummy_link);
      continue;
    }
    if (fields.size() != 5) {
      throw std::invalid_argument("parse_edge_list: malformed row: " + line);
    }
    RoadAdjacency adj;
    adj.from = std::stoi(fields[0]);
    adj.to = std::stoi(fields[1]);
    adj.traverse_time = std::stod(fields[2]);
    adj.right_turn = std::stoi(fields[3]) != 0;
    adj.u_turn = std::stoi(fields[4]) != 0;
    if (adj.from < 0 || adj.to < 0 || adj.traverse_time < 0.0) {
      throw std::invalid_argument("parse_edge_list: invalid values in row: " + line);
    }
    max_link = std::max({max_link, adj.from, adj.to});
    graph.adjacencies.push_back(adj);
  }
  if (graph.dummy_link < 0) throw std::invalid_argument("parse_edge_list: missing sink line");
  if (graph.adjacencies.empty()) throw std::invalid_argument("parse_edge_list: no adjacencies");
  graph.n_links = max_link + 1;
  graph.rebuild_index();
  graph.validate();
  return graph;
}

inline RoadNetworkGraph parse_edge_list(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("parse_edge_list: cannot open " + path);
  return parse_edge_list(is);
}

// MDP over link-pair states s(a,b): 6 movement actions (successors of b in
// stored order; missing ones transition back to s(a,b)) plus a parking
// action that self-loops, acting as the absorbing "end of trip" at
// dummy-link states. Features per state: traverse time, right-turn and
// u-turn flags with the 0:yes/1:no encoding, and 0 on the sink (1 off it).
inline EnvironmentSpec roadnet_env(const RoadNetworkGraph& graph, double gamma = 0.99,
                                   bool with_ground_truth = true) {
  graph.validate();
  const int S = static_cast<int>(graph.adjacencies.size());
  const int A = 7;

  // State s = index of the adjacency (a,b) in graph order.
  std::vector<std::vector<int>> state_of_from(graph.n_links);
  for (int i = 0; i < S; ++i) state_of_from[graph.adjacencies[i].from].push_back(i);
  auto state_index = [&](int a, int b) {
    for (int i : state_of_from[a]) {
      if (graph.adjacencies[i].to == b) return i;
    }
    throw std::logic_error("roadnet_env: unknown link pair");
  };

  TabularMDP mdp(S, A, gamma);
  int n_start = 0;
  for (int i = 0; i < S; ++i) {
    const int b = graph.adjacencies[i].to;
    const auto& succ = graph.successor_index[b];
    for (int m = 0; m < 6; ++m) {
      if (m < static_cast<int>(succ.size())) {
        int c = graph.adjacencies[succ[m]].to;
        mdp.add_transition(i, m, state_index(b, c), 1.0);
      } else {
        mdp.add_transition(i, m, i, 1.0);
      }
    }
    mdp.add_transition(i, 6, i, 1.0);  // parking
    if (b != graph.dummy_link) ++n_start;
  }
  for (int i = 0; i < S; ++i) {
    if (graph.adjacencies[i].to != graph.dummy_link) {
      mdp.add_start_state(i, 1.0 / static_cast<double>(n_start));
    }
  }
  mdp.finalize();

  EnvironmentSpec env{EnvKind::RoadNetwork, std::move(mdp), RewardFamily::LinearFeatures,
                      4,                    {},             {},
                      {}};
  env.state_features.resize(static_cast<std::size_t>(S) * 4);
  for (int i = 0; i < S; ++i) {
    const auto& adj = graph.adjacencies[i];
    env.state_features[i * 4 + 0] = adj.traverse_time;
    env.state_features[i * 4 + 1] = adj.right_turn ? 0.0 : 1.0;
    env.state_features[i * 4 + 2] = (adj.to == graph.dummy_link) ? 0.0 : 1.0;
    env.state_features[i * 4 + 3] = adj.u_turn ? 0.0 : 1.0;
  }
  env.theta_bounds = {{-2.5, 2.5}, {-2.5, 2.5}, {-2.5, 2.5}, {-20.0, -20.0}};
  if (with_ground_truth) {
    env.ground_truth =
        RewardParams({-2.0, -1.0, -1.0, -20.0}, RewardFamily::LinearFeatures, env.theta_bounds);
  }
  env.validate();
  return env;
}

inline EnvironmentSpec build_roadnet(int n_links, std::uint64_t seed, double gamma = 0.99) {
  return roadnet_env(generate_roadnet(n_links, seed), gamma, true);
}

inline EnvironmentSpec import_roadnet(const std::string& edge_list_path, double gamma = 0.99) {
  return roadnet_env(parse_edge_list(edge_list_path), gamma, false);
}

// --- Demonstrations ---------------------------------------------------------

// Expert demonstrations: rollouts of the Boltzmann policy of the ground
// truth reward, fixed length, starts drawn from the MDP start distribution.
inline std::vector<Trajectory> sample_demos(const EnvironmentSpec& env, int count, int length,
                                            std::uint64_t seed, double vi_tol = 1e-8) {
  if (!env.ground_truth) throw std::invalid_argument("sample_demos: environment lacks ground truth");
  auto table = eval_reward(*env.ground_truth, env);
  SoftVIOptions opt;
  opt.tol = vi_tol;
  auto policy = soft_value_iteration(env.mdp, table, opt);
  auto rng = make_rng(seed, 0xde305);
  std::vector<Trajectory> demos;
  demos.reserve(count);
  for (int i = 0; i < count; ++i) {
    int start = env.mdp.sample_start(rng);
    demos.push_back(sample_trajectory(env.mdp, &policy, start, length, rng));
  }
  return demos;
}

// --- Environment config files ----------------------------------------------

// {"kind":"gridworld","gamma":0.9,"coin_seed":0} or {"kind":"gridworld",
// "layout_file":"layout.json"}; {"kind":"roadnet","n_links":60,"seed":7,
// "gamma":0.99} or {"kind":"roadnet","edge_list":"edges.csv"}.
inline EnvironmentSpec env_from_json(const nlohmann::json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "gridworld") {
    double gamma = j.value("gamma", 0.9);
    GridworldLayout layout = j.contains("layout_file")
                                 ? load_gridworld_layout(j.at("layout_file").get<std::string>())
                                 : default_gridworld_layout(j.value("coin_seed", 0ULL));
    return build_gridworld(layout, gamma);
  }
  if (kind == "roadnet") {
    double gamma = j.value("gamma", 0.99);
    if (j.contains("edge_list")) {
      return import_roadnet(j.at("edge_list").get<std::string>(), gamma);
    }
    return build_roadnet(j.value("n_links", 60), j.value("seed", 0ULL), gamma);
  }
  throw std::invalid_argument("env_from_json: unknown kind " + kind);
}

inline EnvironmentSpec load_env(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("load_env: cannot open " + path);
  nlohmann::json j;
  is >> j;
  return env_from_json(j);
}

}  // namespace boirl

#endif  // BOIRL_ENVS_HPP
