// Evaluation harness: task-level parallel rollouts with read-only model
// snapshots. Each task owns its random streams, so results are identical
// regardless of the worker count (capped by QBARRIER_THREADS).
#pragma once

#include <cstdlib>
#include <functional>
#include <string>
#include <thread>
#include <vector>

#include "qbarrier/cmdp.hpp"
#include "qbarrier/model.hpp"
#include "qbarrier/shield.hpp"

namespace qb {

inline int eval_thread_count(int n_items) {
  int hw = static_cast<int>(std::thread::hardware_concurrency());
  if (hw <= 0) hw = 1;
  if (const char* env = std::getenv("QBARRIER_THREADS")) {
    int cap = std::atoi(env);
    if (cap >= 1) hw = std::min(hw, cap);
  }
  return std::min(hw, std::max(1, n_items));
}

inline void parallel_for(int n, const std::function<void(int)>& fn) {
  int workers = eval_thread_count(n);
  if (workers <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::atomic<int> next{0};
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&]() {
      int i;
      while ((i = next.fetch_add(1)) < n) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

struct EvalOptions {
  int n_tasks = 100;
  int episodes = 10;      // in-context episodes per task
  double alpha = 0.5;     // spawn skew of the evaluated tasks
  double fixed_budget = -1.0;  // <0: one budget per task, uniform in the range
  double budget_min = 1.0;
  double budget_max = 15.0;
  ShieldOptions shield;
  uint64_t seed = 1;
};

struct TaskEval {
  TaskSpec task;
  double delta = 0.0;
  ContextResult result;
};

// Task at index i under options; evaluating the same index with different
// shield modes reuses the same layout and budget.
inline TaskSpec eval_task_at(const EnvSpec& env, const EvalOptions& opts, int i,
                             double* delta_out) {
  Rng task_rng = Rng::derive(opts.seed, 7000 + static_cast<uint64_t>(i));
  TaskSpec task = sample_task(env, opts.alpha, task_rng, opts.seed * 1000 + i);
  double delta = opts.fixed_budget >= 0.0
                     ? opts.fixed_budget
                     : task_rng.uniform(opts.budget_min, opts.budget_max);
  if (delta_out) *delta_out = delta;
  return task;
}

inline std::vector<TaskEval> eval_run(const Model& model, const EvalOptions& opts,
                                      uint64_t rollout_stream = 8000) {
  std::vector<TaskEval> out(opts.n_tasks);
  std::string snapshot = model.param_digest().substr(0, 8);
  parallel_for(opts.n_tasks, [&](int i) {
    TaskEval te;
    te.task = eval_task_at(model.cfg.env, opts, i, &te.delta);
    Rng rng = Rng::derive(opts.seed, rollout_stream + static_cast<uint64_t>(i));
    PolicyFn agent = make_shield_agent(model, opts.shield, rng, snapshot);
    te.result = run_context(agent, te.task, opts.episodes, model.cfg.env.horizon,
                            te.delta, i);
    out[i] = std::move(te);
  });
  return out;
}

struct AdaptationSummary {
  // Indexed [k], means and standard errors across tasks.
  std::vector<double> ret_mean, ret_se, cost_mean, cost_se;
};

inline AdaptationSummary summarize_adaptation(const std::vector<TaskEval>& evals,
                                              int episodes) {
  AdaptationSummary s;
  s.ret_mean.assign(episodes, 0.0);
  s.ret_se.assign(episodes, 0.0);
  s.cost_mean.assign(episodes, 0.0);
  s.cost_se.assign(episodes, 0.0);
  if (evals.empty()) return s;
  int n = static_cast<int>(evals.size());
  for (int k = 0; k < episodes; ++k) {
    double rm = 0.0, cm = 0.0;
    for (const auto& te : evals) {
      rm += te.result.episodes[k].total_reward();
      cm += te.result.episodes[k].total_cost();
    }
    rm /= n;
    cm /= n;
    double rv = 0.0, cv = 0.0;
    for (const auto& te : evals) {
      double r = te.result.episodes[k].total_reward() - rm;
      double c = te.result.episodes[k].total_cost() - cm;
      rv += r * r;
      cv += c * c;
    }
    s.ret_mean[k] = rm;
    s.cost_mean[k] = cm;
    if (n > 1) {
      s.ret_se[k] = std::sqrt(rv / (n - 1)) / std::sqrt(static_cast<double>(n));
      s.cost_se[k] = std::sqrt(cv / (n - 1)) / std::sqrt(static_cast<double>(n));
    }
  }
  return s;
}

}  // namespace qb
