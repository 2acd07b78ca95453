#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>
#include <sstream>

#include "boirl/envs.hpp"

using namespace boirl;

TEST_CASE("build_gridworld: geometry, transitions and bounds") {
  auto layout = default_gridworld_layout(3);
  auto env = build_gridworld(layout, 0.9);
  CHECK(env.mdp.n_states() == 36);
  CHECK(env.mdp.n_actions() == 4);
  CHECK(env.mdp.discount() == 0.9);
  REQUIRE(env.theta_bounds.size() == 3);
  CHECK(env.theta_bounds[0].lo == -2.0);
  CHECK(env.theta_bounds[0].hi == 2.0);
  CHECK(env.theta_bounds[1].lo == -10.0);
  CHECK(env.theta_bounds[1].hi == 10.0);
  CHECK(env.theta_bounds[2].lo == -4.0);
  CHECK(env.theta_bounds[2].hi == 4.0);
  REQUIRE(env.ground_truth.has_value());
  CHECK(env.ground_truth->theta(0) == 1.25);
  CHECK(env.ground_truth->theta(1) == 5.0);
  CHECK(env.ground_truth->theta(2) == 0.0);

  // Every action from every cell is deterministic; walls clamp.
  for (int s = 0; s < 36; ++s) {
    for (int a = 0; a < 4; ++a) {
      auto out = env.mdp.outcomes(s, a);
      REQUIRE(out.size() == 1);
      CHECK(out[0].prob == 1.0);
    }
  }
  // Top-left corner: up and left stay put.
  CHECK(env.mdp.transition_prob(0, 0, 0) == 1.0);
  CHECK(env.mdp.transition_prob(0, 3, 0) == 1.0);
  // Moving right from cell 0 reaches cell 1.
  CHECK(env.mdp.transition_prob(0, 1, 1) == 1.0);

  CHECK_THROWS_AS(build_gridworld(GridworldLayout{6, 6, std::vector<int>(10, 0)}),
                  std::invalid_argument);
}

TEST_CASE("eval_reward: logistic family examples") {
  auto layout = default_gridworld_layout(3);
  auto env = build_gridworld(layout);

  // At the midpoint the logistic is 1/2, so the state reward is 5 + translation.
  for (double translation : {0.0, -1.5, 2.0}) {
    double midpoint = env.feature(7, 0);  // place the midpoint at an existing coin count
    RewardParams params({1.0, midpoint, translation}, RewardFamily::LogisticState,
                        env.theta_bounds);
    auto table = eval_reward(params, env);
    CHECK(table.at(0, 0, 7) == Catch::Approx(5.0 + translation).epsilon(1e-12));
  }

  // Zero steepness degenerates to the constant 5 + translation everywhere.
  RewardParams flat({0.0, 3.0, 1.0}, RewardFamily::LogisticState, env.theta_bounds);
  auto table = eval_reward(flat, env);
  for (int next = 0; next < 36; ++next) CHECK(table.at(3, 2, next) == Catch::Approx(6.0));

  // Family mismatch is rejected.
  RewardParams wrong({0.0, 0.0, 0.0, -20.0}, RewardFamily::LinearFeatures,
                     Bounds{{-2.5, 2.5}, {-2.5, 2.5}, {-2.5, 2.5}, {-20.0, -20.0}});
  CHECK_THROWS_AS(eval_reward(wrong, env), std::invalid_argument);
}

TEST_CASE("eval_reward: ground-truth parameters reproduce the expert logistic") {
  auto env = build_gridworld(default_gridworld_layout(3));
  auto table = eval_reward(*env.ground_truth, env);
  for (int next = 0; next < 36; ++next) {
    double psi = env.feature(next, 0);
    double expected = 10.0 / (1.0 + std::exp(-1.25 * (psi - 5.0)));
    CHECK(table.at(0, 0, next) == Catch::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("shape_reward: identity, constant shift and policy invariance") {
  auto env = build_gridworld(default_gridworld_layout(5), 0.9);
  auto table = eval_reward(*env.ground_truth, env);
  const int S = env.mdp.n_states();

  std::vector<double> zero(S, 0.0);
  auto same = shape_reward(table, zero, 0.9);
  for (int s = 0; s < S; ++s) CHECK(same.at(s, 1, s) == table.at(s, 1, s));

  // Constant potential: uniform additive shift (gamma - 1) * c.
  std::vector<double> constant(S, 2.0);
  auto shifted = shape_reward(table, constant, 0.9);
  for (int s : {0, 7, 35}) {
    CHECK(shifted.at(s, 0, 1) - table.at(s, 0, 1) ==
          Catch::Approx((0.9 - 1.0) * 2.0).margin(1e-12));
  }

  // Random potential: the soft policy is unchanged.
  auto rng = make_rng(17);
  std::vector<double> potential(S);
  for (double& p : potential) p = 6.0 * (uniform01(rng) - 0.5);
  auto shaped = shape_reward(table, potential, 0.9);
  SoftVIOptions opt;
  opt.tol = 1e-11;
  auto base = soft_value_iteration(env.mdp, table, opt);
  auto after = soft_value_iteration(env.mdp, shaped, opt);
  for (int s = 0; s < S; ++s) {
    for (int a = 0; a < 4; ++a) {
      CHECK(after.prob(s, a) == Catch::Approx(base.prob(s, a)).margin(1e-8));
    }
  }
}

TEST_CASE("generate_roadnet: structure, determinism and constraints") {
  auto graph = generate_roadnet(60, 7);
  CHECK(graph.n_links >= 60);
  CHECK(graph.dummy_link == graph.n_links - 1);
  CHECK_NOTHROW(graph.validate());

  // Identical graph for the same seed.
  auto again = generate_roadnet(60, 7);
  REQUIRE(again.adjacencies.size() == graph.adjacencies.size());
  for (std::size_t i = 0; i < graph.adjacencies.size(); ++i) {
    CHECK(again.adjacencies[i].from == graph.adjacencies[i].from);
    CHECK(again.adjacencies[i].to == graph.adjacencies[i].to);
    CHECK(again.adjacencies[i].traverse_time == graph.adjacencies[i].traverse_time);
  }
  auto different = generate_roadnet(60, 8);
  bool any_diff = different.adjacencies.size() != graph.adjacencies.size();
  for (std::size_t i = 0; !any_diff && i < graph.adjacencies.size(); ++i) {
    any_diff = different.adjacencies[i].to != graph.adjacencies[i].to;
  }
  CHECK(any_diff);

  // Every real link keeps within the successor cap.
  for (int l = 0; l < graph.n_links - 1; ++l) {
    int reals = 0;
    for (int idx : graph.successor_index[l]) {
      if (graph.adjacencies[idx].to != graph.dummy_link) ++reals;
    }
    CHECK(reals >= 1);
    CHECK(reals <= 5);
  }

  CHECK_THROWS_AS(generate_roadnet(4, 1), std::invalid_argument);
}

TEST_CASE("roadnet_env: states, actions, features and ground truth") {
  auto graph = generate_roadnet(60, 7);
  auto env = roadnet_env(graph, 0.99);
  CHECK(env.mdp.n_actions() == 7);
  CHECK(env.mdp.n_states() == static_cast<int>(graph.adjacencies.size()));
  CHECK(env.feature_dim == 4);
  REQUIRE(env.theta_bounds.size() == 4);
  CHECK(env.theta_bounds[3].lo == -20.0);
  CHECK(env.theta_bounds[3].hi == -20.0);  // frozen coordinate
  REQUIRE(env.ground_truth.has_value());
  CHECK(env.ground_truth->theta(0) == -2.0);
  CHECK(env.ground_truth->theta(1) == -1.0);
  CHECK(env.ground_truth->theta(2) == -1.0);
  CHECK(env.ground_truth->theta(3) == -20.0);

  // Movement rows are deterministic; actions beyond the successor count and
  // the parking action self-loop.
  for (int s = 0; s < env.mdp.n_states(); ++s) {
    for (int a = 0; a < 7; ++a) {
      auto out = env.mdp.outcomes(s, a);
      REQUIRE(out.size() == 1);
      CHECK(out[0].prob == 1.0);
    }
    CHECK(env.mdp.transition_prob(s, 6, s) == 1.0);  // parking self-loops
  }

  // Feature encoding: sink flag is 0 exactly on dummy-link states; turn
  // flags use 0:yes / 1:no.
  int sink_states = 0;
  for (int s = 0; s < env.mdp.n_states(); ++s) {
    const auto& adj = graph.adjacencies[s];
    if (adj.to == graph.dummy_link) {
      ++sink_states;
      CHECK(env.feature(s, 2) == 0.0);
      CHECK(env.feature(s, 0) == 0.0);  // dummy link takes no time
    } else {
      CHECK(env.feature(s, 2) == 1.0);
    }
    CHECK(env.feature(s, 1) == (adj.right_turn ? 0.0 : 1.0));
    CHECK(env.feature(s, 3) == (adj.u_turn ? 0.0 : 1.0));
  }
  CHECK(sink_states >= 1);

  // The linear form at zeroed learnable weights reduces to the frozen
  // u-turn term.
  RewardParams zeroish({0.0, 0.0, 0.0, -20.0}, RewardFamily::LinearFeatures, env.theta_bounds);
  auto table = eval_reward(zeroish, env);
  for (int s : {0, 1}) {
    CHECK(table.at(0, 0, s) == Catch::Approx(-20.0 * env.feature(s, 3)).margin(1e-12));
  }
}

TEST_CASE("roadnet edge-list export/import round trip") {
  auto graph = generate_roadnet(30, 11);
  std::stringstream buffer;
  write_edge_list(graph, buffer);
  auto parsed = parse_edge_list(buffer);
  CHECK(parsed.n_links == graph.n_links);
  CHECK(parsed.dummy_link == graph.dummy_link);
  REQUIRE(parsed.adjacencies.size() == graph.adjacencies.size());
  for (std::size_t i = 0; i < graph.adjacencies.size(); ++i) {
    CHECK(parsed.adjacencies[i].from == graph.adjacencies[i].from);
    CHECK(parsed.adjacencies[i].to == graph.adjacencies[i].to);
    CHECK(parsed.adjacencies[i].traverse_time == graph.adjacencies[i].traverse_time);
    CHECK(parsed.adjacencies[i].right_turn == graph.adjacencies[i].right_turn);
    CHECK(parsed.adjacencies[i].u_turn == graph.adjacencies[i].u_turn);
  }
  // The imported environment matches the generated one structurally.
  auto env_a = roadnet_env(graph, 0.99);
  auto env_b = roadnet_env(parsed, 0.99, false);
  CHECK(env_b.mdp.n_states() == env_a.mdp.n_states());
  CHECK_FALSE(env_b.ground_truth.has_value());
  for (int s = 0; s < env_a.mdp.n_states(); ++s) {
    for (int a = 0; a < 7; ++a) {
      CHECK(env_b.mdp.outcomes(s, a)[0].next == env_a.mdp.outcomes(s, a)[0].next);
    }
  }
}

TEST_CASE("parse_edge_list: u-turn feature example and malformed inputs") {
  // Tiny hand-written net: links 0 and 1 are reverse directions of one
  // street, link 2 is the dummy hanging off link 0.
  std::string csv =
      "src_link,dst_link,traverse_time,right_turn,u_turn\n"
      "sink,2\n"
      "0,1,1,0,1\n"
      "0,2,0,0,0\n"
      "1,0,1,0,1\n";
  std::stringstream is(csv);
  auto graph = parse_edge_list(is);
  CHECK(graph.n_links == 3);
  CHECK(graph.dummy_link == 2);
  auto env = roadnet_env(graph, 0.99, false);
  // State (0,1): a u-turn transition with traverse time 1, not a right
  // turn, not the sink -> features (1, 1, 1, 0).
  int s01 = -1;
  for (int s = 0; s < env.mdp.n_states(); ++s) {
    if (graph.adjacencies[s].from == 0 && graph.adjacencies[s].to == 1) s01 = s;
  }
  REQUIRE(s01 >= 0);
  CHECK(env.feature(s01, 0) == 1.0);
  CHECK(env.feature(s01, 1) == 1.0);
  CHECK(env.feature(s01, 2) == 1.0);
  CHECK(env.feature(s01, 3) == 0.0);

  std::stringstream missing_sink("src_link,dst_link,traverse_time,right_turn,u_turn\n0,1,1,0,0\n");
  CHECK_THROWS_AS(parse_edge_list(missing_sink), std::invalid_argument);
  std::stringstream bad_row("src_link,dst_link,traverse_time,right_turn,u_turn\nsink,1\n0,1,1\n");
  CHECK_THROWS_AS(parse_edge_list(bad_row), std::invalid_argument);
}

TEST_CASE("roadnet adjacency cap is enforced") {
  // A star of 7 streets around junction-link 0 would give it 6 successors.
  std::stringstream is;
  is << "src_link,dst_link,traverse_time,right_turn,u_turn\nsink,7\n";
  for (int b = 1; b <= 6; ++b) is << "0," << b << ",1,0,0\n";
  is << "1,7,0,0,0\n";
  CHECK_THROWS_AS(parse_edge_list(is), std::invalid_argument);
}

TEST_CASE("gridworld layout JSON and env config round trips") {
  auto layout = default_gridworld_layout(9);
  auto j = gridworld_layout_to_json(layout);
  auto back = gridworld_layout_from_json(j);
  CHECK(back.width == 6);
  CHECK(back.height == 6);
  CHECK(back.coins == layout.coins);

  nlohmann::json env_cfg = {{"kind", "gridworld"}, {"gamma", 0.9}, {"coin_seed", 9}};
  auto env = env_from_json(env_cfg);
  CHECK(env.kind == EnvKind::Gridworld);
  for (int s = 0; s < 36; ++s) CHECK(env.feature(s, 0) == static_cast<double>(layout.coins[s]));

  nlohmann::json road_cfg = {{"kind", "roadnet"}, {"n_links", 20}, {"seed", 3}};
  auto road = env_from_json(road_cfg);
  CHECK(road.kind == EnvKind::RoadNetwork);
  CHECK(road.mdp.discount() == 0.99);
}

TEST_CASE("sample_demos: reproducible expert rollouts") {
  auto env = build_gridworld(default_gridworld_layout(3));
  auto demos = sample_demos(env, 10, 15, 42);
  REQUIRE(demos.size() == 10);
  for (const auto& d : demos) {
    CHECK(d.length() == 15);
    CHECK_NOTHROW(validate_trajectory(d, env.mdp));
  }
  auto again = sample_demos(env, 10, 15, 42);
  for (std::size_t i = 0; i < demos.size(); ++i) CHECK(demos[i].steps == again[i].steps);
}
