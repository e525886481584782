#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <set>

#include "qbarrier/cmdp.hpp"
#include "qbarrier/probe.hpp"
#include "qbarrier/runlog.hpp"
#include "test_util.hpp"

using namespace qb;

static EnvSpec grid_env(int size = 5, int obstacles = 3, int horizon = 30) {
  EnvSpec env;
  env.kind = EnvKind::Gridworld;
  env.grid_size = size;
  env.n_obstacles = obstacles;
  env.horizon = horizon;
  return env;
}

TEST_CASE("spawn law: alpha=0 is uniform over the candidate cells") {
  EnvSpec env = grid_env(5);
  auto law = spawn_law(env, 0.0);
  for (double p : law) REQUIRE(p == Catch::Approx(1.0 / 25.0).margin(1e-12));
}

TEST_CASE("spawn law: center-to-corner ratio matches the exponential-distance form") {
  // 5x5 grid, center-oriented with magnitude 0.5 (signed alpha -0.5): the
  // center cell is exp(0.5 * 2*sqrt(2)) times more likely than a corner.
  EnvSpec env = grid_env(5);
  auto law = spawn_law(env, -0.5);
  int center = grid_center_cell(env);
  double ratio = law[center] / law[0];
  REQUIRE(ratio == Catch::Approx(std::exp(0.5 * 2.0 * std::sqrt(2.0))).epsilon(1e-9));

  // Brute-force normalizer over the 25 cells.
  double z = 0.0;
  for (int c = 0; c < 25; ++c)
    z += std::exp(-0.5 * grid_cell_distance(env, c, center));
  REQUIRE(law[center] == Catch::Approx(1.0 / z).epsilon(1e-12));
}

TEST_CASE("spawn sampling: empirical goal frequencies approach the analytic law") {
  EnvSpec env = grid_env(5);
  for (double alpha : {-0.5, 0.0, 0.5}) {
    auto law = spawn_law(env, alpha);
    std::vector<int> counts(25, 0);
    Rng rng(99);
    const int n = 100000;
    for (int i = 0; i < n; ++i) counts[sample_task(env, alpha, rng).goal_cell]++;
    double tv = 0.0;
    for (int c = 0; c < 25; ++c)
      tv += std::abs(static_cast<double>(counts[c]) / n - law[c]);
    tv *= 0.5;
    INFO("alpha=" << alpha << " tv=" << tv);
    REQUIRE(tv <= 0.01);
  }
}

TEST_CASE("sample_task: layout invariants hold") {
  EnvSpec env = grid_env(5, 6);
  Rng rng(4);
  for (int i = 0; i < 200; ++i) {
    TaskSpec t = sample_task(env, 0.5, rng);
    std::set<int> obstacles(t.obstacle_cells.begin(), t.obstacle_cells.end());
    REQUIRE(obstacles.size() == 6);                       // without replacement
    REQUIRE(obstacles.count(t.goal_cell) == 0);           // goal not an obstacle
    REQUIRE(obstacles.count(grid_center_cell(env)) == 0); // start not an obstacle
  }
  REQUIRE_THROWS_AS(sample_task(grid_env(2), 0.0, rng), ContractError);
  REQUIRE_THROWS_AS(sample_task(grid_env(3, 8), 0.0, rng), ContractError);
}

TEST_CASE("gridworld step: walls, hazards and goal termination") {
  EnvSpec env = grid_env(5, 0, 30);
  TaskSpec task;
  task.env = env;
  task.goal_cell = 24;       // bottom-right corner
  task.obstacle_cells = {13}; // x=3, y=2

  SECTION("moving into the boundary leaves the position unchanged") {
    EnvState s = env_reset(task);
    s.cell = 0;
    Transition tr = env_step(task, s, {static_cast<float>(kUp)});
    REQUIRE(s.cell == 0);
    REQUIRE(tr.reward == 0.0f);
    REQUIRE(tr.cost == 0.0f);
    REQUIRE_FALSE(tr.done);
  }
  SECTION("stepping onto an obstacle cell costs 1") {
    EnvState s = env_reset(task);
    REQUIRE(s.cell == 12);  // center
    Transition tr = env_step(task, s, {static_cast<float>(kRight)});
    REQUIRE(s.cell == 13);
    REQUIRE(tr.cost == 1.0f);
  }
  SECTION("reaching the goal rewards 1 and ends the episode early") {
    EnvState s = env_reset(task);
    s.cell = 23;
    Transition tr = env_step(task, s, {static_cast<float>(kRight)});
    REQUIRE(tr.reward == 1.0f);
    REQUIRE(tr.done);
    REQUIRE(s.done);
  }
  SECTION("out-of-range action is a contract violation") {
    EnvState s = env_reset(task);
    REQUIRE_THROWS_AS(env_step(task, s, {9.0f}), ContractError);
  }
  SECTION("observation exposes only the agent position") {
    EnvState s = env_reset(task);
    auto obs = s.observation(env);
    REQUIRE(obs.size() == 2);
    REQUIRE(obs[0] == Catch::Approx(0.5));
    REQUIRE(obs[1] == Catch::Approx(0.5));
  }
}

TEST_CASE("velocity toy: hinge cost boundary and dynamics") {
  EnvSpec env;
  env.kind = EnvKind::Velocity;
  env.horizon = 10;
  TaskSpec task;
  task.env = env;
  task.v_target = 1.2;

  EnvState s = env_reset(task);
  s.v = env.v_limit;  // exactly at the limit
  Transition tr = env_step(task, s, {0.0f});
  REQUIRE(tr.cost == 0.0f);  // hinge boundary
  REQUIRE(tr.reward == Catch::Approx(-std::abs(env.v_limit - 1.2)).margin(1e-6));

  s.v = env.v_limit + 0.5;
  tr = env_step(task, s, {0.0f});
  REQUIRE(tr.cost == Catch::Approx(0.5).margin(1e-6));

  REQUIRE_THROWS_AS(env_step(task, s, {1.5f}), ContractError);
}

TEST_CASE("run_context: budget recursion and resets") {
  EnvSpec env = grid_env(5, 0, 30);
  TaskSpec task;
  task.env = env;
  task.goal_cell = 0;

  SECTION("zero-cost environment keeps the budget flat") {
    auto stay = [](const std::vector<Transition>&, const std::vector<float>&, double,
                   int, int) {
      return ActionChoice{{static_cast<float>(kStay)}, std::nullopt};
    };
    ContextResult res = run_context(stay, task, 2, 5, 3.0);
    for (const auto& ep : res.episodes)
      for (double b : ep.budget_trace) REQUIRE(b == 3.0);
  }

  SECTION("budget trace follows delta minus the running cost sum") {
    // Iterate a hand-built cost sequence [1, 2, 0] via obstacle placement:
    // walk right through two hazard cells then stay.
    TaskSpec t2 = task;
    t2.goal_cell = 24;
    t2.obstacle_cells = {13};  // first step right costs 1
    int step = 0;
    auto walker = [&step](const std::vector<Transition>&, const std::vector<float>&,
                          double, int, int) {
      float a = step == 0 ? static_cast<float>(kRight)
                          : (step == 1 ? static_cast<float>(kLeft)
                                       : static_cast<float>(kStay));
      ++step;
      return ActionChoice{{a}, std::nullopt};
    };
    ContextResult res = run_context(walker, t2, 1, 3, 5.0);
    const auto& trace = res.episodes[0].budget_trace;
    REQUIRE(trace.size() == 4);
    REQUIRE(trace[0] == 5.0);
    REQUIRE(trace[1] == 4.0);  // stepped onto hazard
    REQUIRE(trace[2] == 4.0);  // stepped back off
    REQUIRE(trace[3] == 4.0);  // stay
  }

  SECTION("always-stay from a clean start accrues no cost and no reward") {
    TaskSpec t3 = task;
    t3.goal_cell = 3;  // not the center
    t3.obstacle_cells = {7};
    auto stay = [](const std::vector<Transition>&, const std::vector<float>&, double,
                   int, int) {
      return ActionChoice{{static_cast<float>(kStay)}, std::nullopt};
    };
    ContextResult res = run_context(stay, t3, 1, 10, 2.0);
    REQUIRE(res.episodes[0].total_cost() == 0.0);
    REQUIRE(res.episodes[0].total_reward() == 0.0);
  }

  SECTION("budget resets to delta at each episode start") {
    TaskSpec t4 = task;
    t4.goal_cell = 24;
    t4.obstacle_cells = {13};
    auto right = [](const std::vector<Transition>&, const std::vector<float>&, double,
                    int, int) {
      return ActionChoice{{static_cast<float>(kRight)}, std::nullopt};
    };
    ContextResult res = run_context(right, t4, 3, 2, 5.0);
    for (const auto& ep : res.episodes) {
      REQUIRE(ep.budget_trace[0] == 5.0);
      REQUIRE(ep.budget_trace[1] == 4.0);
    }
  }

  SECTION("policy failure aborts with partial logs") {
    int calls = 0;
    auto flaky = [&calls](const std::vector<Transition>&, const std::vector<float>&,
                          double, int, int) -> ActionChoice {
      if (++calls >= 3) throw std::runtime_error("callback failure");
      return ActionChoice{{static_cast<float>(kStay)}, std::nullopt};
    };
    ContextResult res = run_context(flaky, task, 2, 10, 1.0);
    REQUIRE(res.aborted);
    REQUIRE(res.episodes.size() >= 1);
  }

  SECTION("invalid arguments are contract violations") {
    auto stay = [](const std::vector<Transition>&, const std::vector<float>&, double,
                   int, int) {
      return ActionChoice{{static_cast<float>(kStay)}, std::nullopt};
    };
    REQUIRE_THROWS_AS(run_context(stay, task, 0, 5, 1.0), ContractError);
    REQUIRE_THROWS_AS(run_context(stay, task, 1, 5, -1.0), ContractError);
  }
}

TEST_CASE("budget identity holds on random rollouts") {
  EnvSpec env = grid_env(5, 5, 20);
  Rng rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    TaskSpec task = sample_task(env, -0.5, rng);
    Rng arng(trial);
    auto random_policy = [&arng, &env](const std::vector<Transition>&,
                                       const std::vector<float>&, double, int, int) {
      return ActionChoice{{static_cast<float>(arng.uniform_int(env.n_actions()))},
                          std::nullopt};
    };
    ContextResult res = run_context(random_policy, task, 3, env.horizon, 7.0);
    REQUIRE_FALSE(verify_budget_identity({res}).has_value());
    for (const auto& ep : res.episodes) {
      // B_T = delta - G_c exactly.
      REQUIRE(ep.budget_trace.back() == ep.delta - ep.total_cost());
    }
  }
}

TEST_CASE("trajectory log round-trips through CSV") {
  EnvSpec env = grid_env(5, 4, 15);
  Rng rng(23);
  TaskSpec task = sample_task(env, 0.5, rng);
  Rng arng(5);
  auto random_policy = [&arng, &env](const std::vector<Transition>&,
                                     const std::vector<float>&, double, int, int) {
    return ActionChoice{{static_cast<float>(arng.uniform_int(env.n_actions()))},
                        std::nullopt};
  };
  std::vector<ContextResult> contexts;
  contexts.push_back(run_context(random_policy, task, 2, env.horizon, 4.0, 0));
  contexts.push_back(run_context(random_policy, task, 1, env.horizon, 2.5, 1));

  namespace fs = std::filesystem;
  auto dir = fs::temp_directory_path() / "qb_runlog_test";
  fs::create_directories(dir);
  std::string tpath = (dir / "run.csv").string();
  std::string dpath = (dir / "run_decisions.csv").string();
  write_trajectory_csv(tpath, contexts, env.state_dim());
  write_decisions_csv(dpath, contexts);

  auto loaded = load_run(tpath, dpath);
  REQUIRE(loaded.size() == 2);
  REQUIRE(loaded[0].delta == 4.0);
  REQUIRE(loaded[1].delta == 2.5);
  for (size_t c = 0; c < 2; ++c) {
    REQUIRE(loaded[c].episodes.size() == contexts[c].episodes.size());
    for (size_t k = 0; k < loaded[c].episodes.size(); ++k) {
      const auto& a = loaded[c].episodes[k];
      const auto& b = contexts[c].episodes[k];
      REQUIRE(a.transitions.size() == b.transitions.size());
      REQUIRE(a.budget_trace == b.budget_trace);
      for (size_t t = 0; t < a.transitions.size(); ++t) {
        REQUIRE(a.transitions[t].state == b.transitions[t].state);
        REQUIRE(a.transitions[t].next_state == b.transitions[t].next_state);
        REQUIRE(a.transitions[t].action == b.transitions[t].action);
        REQUIRE(a.transitions[t].reward == b.transitions[t].reward);
        REQUIRE(a.transitions[t].cost == b.transitions[t].cost);
        REQUIRE(a.transitions[t].done == b.transitions[t].done);
        REQUIRE(a.transitions[t].d_ctx == b.transitions[t].d_ctx);
      }
    }
  }
  fs::remove_all(dir);
}
