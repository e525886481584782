// Constrained-MDP environments, the distance-skewed task sampler, the episode
// rollout engine and exact budget accounting.
//
// Two environments are provided:
//  * a partially observed gridworld: 5 actions (up/down/left/right/stay),
//    reward 1 on reaching the hidden goal (episode ends early), cost 1 per
//    step spent on a hazard cell, the agent observes only its own position;
//  * a 1-D velocity toy: acceleration in [-1,1], reward -|v - v_target| with
//    the target hidden, cost [|v| - v_limit]_+. This is an invented
//    desk-scale stand-in for constrained locomotion, used to exercise
//    continuous candidate sampling.
#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "qbarrier/decision.hpp"
#include "qbarrier/errors.hpp"
#include "qbarrier/rng.hpp"

namespace qb {

enum class EnvKind { Gridworld, Velocity };

struct EnvSpec {
  EnvKind kind = EnvKind::Gridworld;
  int grid_size = 5;
  int n_obstacles = 5;
  int horizon = 30;

  // Velocity-toy constants.
  double v_limit = 1.0;
  double v_max = 3.0;
  double accel_scale = 0.25;
  double v_target_min = 0.5;
  double v_target_max = 2.0;

  bool discrete() const { return kind == EnvKind::Gridworld; }
  int state_dim() const { return kind == EnvKind::Gridworld ? 2 : 1; }
  int n_actions() const { return kind == EnvKind::Gridworld ? 5 : 0; }
  // Width of the action slot inside a context embedding (one-hot or raw value).
  int action_emb_dim() const { return kind == EnvKind::Gridworld ? 5 : 1; }
  // Per-transition embedding: state, action, reward, cost, boundary flag.
  int emb_dim() const { return state_dim() + action_emb_dim() + 3; }
};

// Gridworld action order.
enum GridAction { kUp = 0, kDown = 1, kLeft = 2, kRight = 3, kStay = 4 };

struct Transition {
  std::vector<float> state;
  std::vector<float> action;  // [index] for discrete, [value] for continuous
  std::vector<float> next_state;
  float reward = 0.0f;
  float cost = 0.0f;
  bool done = false;   // episode termination (goal reached or horizon)
  bool d_ctx = false;  // episode boundary inside the context
};

struct BudgetState {
  double delta = 0.0;
  double cum_cost = 0.0;
  double remaining() const { return delta - cum_cost; }
};

struct TaskSpec {
  EnvSpec env;
  double alpha = 0.0;  // signed: negative concentrates at the center
  uint64_t seed = 0;
  // Gridworld layout.
  int goal_cell = 0;
  std::vector<int> obstacle_cells;
  // Velocity toy.
  double v_target = 1.0;

  bool is_obstacle(int cell) const {
    for (int c : obstacle_cells)
      if (c == cell) return true;
    return false;
  }
};

struct EpisodeLog {
  std::vector<Transition> transitions;
  double delta = 0.0;
  std::vector<double> budget_trace;  // B_0, B_1, ..., B_T

  double total_reward() const {
    double g = 0.0;
    for (const auto& tr : transitions) g += tr.reward;
    return g;
  }
  double total_cost() const {
    double g = 0.0;
    for (const auto& tr : transitions) g += tr.cost;
    return g;
  }
  // Cost-to-go from step t (sum of costs at steps >= t).
  double cost_to_go(size_t t) const {
    double g = 0.0;
    for (size_t i = t; i < transitions.size(); ++i) g += transitions[i].cost;
    return g;
  }
  double return_to_go(size_t t) const {
    double g = 0.0;
    for (size_t i = t; i < transitions.size(); ++i) g += transitions[i].reward;
    return g;
  }
};

// ---------------------------------------------------------------------------
// Task sampling. Cell weights follow exp(alpha * d(cell, center)) with
// Euclidean distance to the map center; the goal is drawn over all cells, the
// obstacles over the remaining cells excluding start and goal, each draw
// renormalized (sampling without replacement).

inline int grid_center_cell(const EnvSpec& env) {
  int c = (env.grid_size - 1) / 2;
  return c * env.grid_size + c;
}

inline double grid_cell_distance(const EnvSpec& env, int a, int b) {
  int ax = a % env.grid_size, ay = a / env.grid_size;
  int bx = b % env.grid_size, by = b / env.grid_size;
  double dx = ax - bx, dy = ay - by;
  return std::sqrt(dx * dx + dy * dy);
}

// Analytic per-cell probabilities for a single draw over `candidates`.
inline std::vector<double> spawn_law(const EnvSpec& env, double alpha,
                                     const std::vector<int>& candidates) {
  int center = grid_center_cell(env);
  std::vector<double> p(candidates.size());
  double z = 0.0;
  for (size_t i = 0; i < candidates.size(); ++i) {
    p[i] = std::exp(alpha * grid_cell_distance(env, candidates[i], center));
    z += p[i];
  }
  for (auto& v : p) v /= z;
  return p;
}

// Law of the goal draw over all cells.
inline std::vector<double> spawn_law(const EnvSpec& env, double alpha) {
  std::vector<int> cells(env.grid_size * env.grid_size);
  for (size_t i = 0; i < cells.size(); ++i) cells[i] = static_cast<int>(i);
  return spawn_law(env, alpha, cells);
}

inline TaskSpec sample_task(const EnvSpec& env, double alpha, Rng& rng,
                            uint64_t seed_tag = 0) {
  TaskSpec task;
  task.env = env;
  task.alpha = alpha;
  task.seed = seed_tag;
  if (env.kind == EnvKind::Velocity) {
    task.v_target = rng.uniform(env.v_target_min, env.v_target_max);
    return task;
  }
  if (env.grid_size < 3) throw ContractError("sample_task: grid_size must be >= 3");
  int n_cells = env.grid_size * env.grid_size;
  if (env.n_obstacles >= n_cells - 2)
    throw ContractError("sample_task: too many obstacles for the grid");

  int start = grid_center_cell(env);
  std::vector<int> cells(n_cells);
  for (int i = 0; i < n_cells; ++i) cells[i] = i;

  // Goal over all cells (the start cell is a legal goal).
  std::vector<double> weights(n_cells);
  int center = grid_center_cell(env);
  for (int i = 0; i < n_cells; ++i)
    weights[i] = std::exp(alpha * grid_cell_distance(env, i, center));
  task.goal_cell = cells[rng.categorical(weights)];

  // Obstacles without replacement, excluding start and goal.
  std::vector<int> pool;
  std::vector<double> pw;
  for (int i = 0; i < n_cells; ++i) {
    if (i == start || i == task.goal_cell) continue;
    pool.push_back(i);
    pw.push_back(weights[i]);
  }
  for (int k = 0; k < env.n_obstacles; ++k) {
    if (pool.empty()) throw SamplingError("sample_task: obstacle pool exhausted");
    int idx = rng.categorical(pw);
    task.obstacle_cells.push_back(pool[idx]);
    pool.erase(pool.begin() + idx);
    pw.erase(pw.begin() + idx);
  }
  return task;
}

// ---------------------------------------------------------------------------
// Dynamics.

struct EnvState {
  int cell = 0;       // gridworld
  double v = 0.0;     // velocity toy
  int t = 0;
  bool done = false;

  std::vector<float> observation(const EnvSpec& env) const {
    if (env.kind == EnvKind::Gridworld) {
      float inv = env.grid_size > 1 ? 1.0f / static_cast<float>(env.grid_size - 1) : 1.0f;
      return {static_cast<float>(cell % env.grid_size) * inv,
              static_cast<float>(cell / env.grid_size) * inv};
    }
    return {static_cast<float>(v / env.v_max)};
  }
};

inline EnvState env_reset(const TaskSpec& task) {
  EnvState s;
  if (task.env.kind == EnvKind::Gridworld) s.cell = grid_center_cell(task.env);
  return s;
}

inline Transition env_step(const TaskSpec& task, EnvState& state,
                           const std::vector<float>& action) {
  const EnvSpec& env = task.env;
  if (state.done) throw ContractError("env_step: episode already done");
  Transition tr;
  tr.state = state.observation(env);
  tr.action = action;
  if (env.kind == EnvKind::Gridworld) {
    if (action.size() != 1) throw ContractError("env_step: expected one action index");
    int a = static_cast<int>(action[0]);
    if (a < 0 || a >= env.n_actions())
      throw ContractError("env_step: action index out of range");
    int x = state.cell % env.grid_size, y = state.cell / env.grid_size;
    int nx = x, ny = y;
    switch (a) {
      case kUp: ny = y - 1; break;
      case kDown: ny = y + 1; break;
      case kLeft: nx = x - 1; break;
      case kRight: nx = x + 1; break;
      case kStay: break;
    }
    // Moves into the boundary leave the position unchanged.
    if (nx < 0 || nx >= env.grid_size || ny < 0 || ny >= env.grid_size) {
      nx = x;
      ny = y;
    }
    state.cell = ny * env.grid_size + nx;
    tr.cost = task.is_obstacle(state.cell) ? 1.0f : 0.0f;
    if (state.cell == task.goal_cell) {
      tr.reward = 1.0f;
      state.done = true;  // reaching the goal ends the episode early
    }
  } else {
    if (action.size() != 1) throw ContractError("env_step: expected one acceleration");
    double a = action[0];
    if (a < -1.0 - 1e-6 || a > 1.0 + 1e-6)
      throw ContractError("env_step: acceleration outside [-1, 1]");
    state.v = std::min(std::max(state.v + env.accel_scale * a, -env.v_max), env.v_max);
    tr.reward = static_cast<float>(-std::abs(state.v - task.v_target));
    tr.cost = static_cast<float>(std::max(0.0, std::abs(state.v) - env.v_limit));
  }
  ++state.t;
  if (state.t >= env.horizon) state.done = true;
  tr.done = state.done;
  tr.d_ctx = state.done;  // every episode end is a context boundary
  tr.next_state = state.observation(env);
  return tr;
}

// ---------------------------------------------------------------------------
// Rollouts. The policy callback sees the cross-episode history accumulated so
// far, the current observation and the remaining budget, and returns an
// action together with an optional decision record.

struct ActionChoice {
  std::vector<float> action;
  std::optional<ShieldDecision> decision;
};

using PolicyFn = std::function<ActionChoice(
    const std::vector<Transition>& history, const std::vector<float>& observation,
    double budget_remaining, int episode_k, int t)>;

struct ContextResult {
  TaskSpec task;
  double delta = 0.0;
  std::vector<EpisodeLog> episodes;
  std::vector<ShieldDecision> decisions;
  bool aborted = false;
  std::string abort_reason;

  std::vector<Transition> flat_transitions() const {
    std::vector<Transition> out;
    for (const auto& ep : episodes)
      out.insert(out.end(), ep.transitions.begin(), ep.transitions.end());
    return out;
  }
};

// Runs K episodes of horizon at most T. The budget resets to delta at each
// episode start; within an episode B_{t+1} = B_t - C_{t+1} exactly. A policy
// callback failure aborts the rollout and returns the partial logs.
inline ContextResult run_context(const PolicyFn& policy, const TaskSpec& task, int K,
                                 int T, double delta, int context_id = 0) {
  if (K < 1 || T < 1) throw ContractError("run_context: K and T must be >= 1");
  if (delta < 0.0) throw ContractError("run_context: delta must be >= 0");
  ContextResult res;
  res.task = task;
  res.delta = delta;
  std::vector<Transition> history;
  for (int k = 1; k <= K; ++k) {
    EpisodeLog ep;
    ep.delta = delta;
    BudgetState budget;
    budget.delta = delta;
    ep.budget_trace.push_back(budget.remaining());
    EnvState state = env_reset(task);
    for (int t = 0; t < T && !state.done; ++t) {
      ActionChoice choice;
      try {
        choice = policy(history, state.observation(task.env), budget.remaining(), k, t);
      } catch (const std::exception& e) {
        res.aborted = true;
        res.abort_reason = e.what();
        res.episodes.push_back(std::move(ep));
        return res;
      }
      Transition tr = env_step(task, state, choice.action);
      budget.cum_cost += static_cast<double>(tr.cost);
      ep.budget_trace.push_back(budget.remaining());
      if (choice.decision) {
        choice.decision->context_id = context_id;
        choice.decision->episode_k = k;
        choice.decision->t = t;
        choice.decision->budget = ep.budget_trace[ep.budget_trace.size() - 2];
        res.decisions.push_back(std::move(*choice.decision));
      }
      ep.transitions.push_back(tr);
      history.push_back(std::move(tr));
    }
    res.episodes.push_back(std::move(ep));
  }
  return res;
}

}  // namespace qb
