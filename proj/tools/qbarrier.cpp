// Command-line entry points: training, evaluation sweeps, ablations,
// diagnostics and spawn-law checks. Operators launch batch runs; every run
// writes a resolved config copy and CSV outputs (plus derived SVG charts)
// into the output directory.
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "qbarrier/checkpoint.hpp"
#include "qbarrier/cmdp.hpp"
#include "qbarrier/config.hpp"
#include "qbarrier/csv.hpp"
#include "qbarrier/eval.hpp"
#include "qbarrier/model.hpp"
#include "qbarrier/probe.hpp"
#include "qbarrier/runlog.hpp"
#include "qbarrier/sha256.hpp"
#include "qbarrier/shield.hpp"
#include "qbarrier/svg.hpp"
#include "qbarrier/trainer.hpp"

namespace fs = std::filesystem;
using namespace qb;

namespace {

struct CliOverrides {
  std::string config_path;
  std::string checkpoint_path;
  std::string out_dir = "out";
  int64_t seed = -1;
  std::string shield;
  int ns = -1;
  double alpha = std::nan("");
  std::string budget_grid;
  int tasks = -1;
  int episodes = -1;
  std::string trajectory_path;
  int epochs = -1;
};

RunConfig resolve_config(const CliOverrides& cli) {
  RunConfig cfg;
  if (!cli.config_path.empty()) cfg = RunConfig::from_file(cli.config_path);
  if (cli.seed >= 0) cfg.seed = static_cast<uint64_t>(cli.seed);
  if (!cli.shield.empty()) cfg.shield = cli.shield;
  if (cli.ns > 0) cfg.ns = cli.ns;
  if (!std::isnan(cli.alpha)) cfg.alpha_test = cli.alpha;
  if (!cli.budget_grid.empty()) cfg.budget_grid = cli.budget_grid;
  if (cli.tasks > 0) cfg.eval_tasks = cli.tasks;
  if (cli.episodes > 0) cfg.eval_episodes = cli.episodes;
  if (cli.epochs >= 0) cfg.epochs = cli.epochs;
  return cfg;
}

// Digest over the fields that determine the network structure; a checkpoint
// can only be evaluated under a config that agrees on these.
std::string structure_digest(const RunConfig& cfg) {
  std::ostringstream o;
  o << cfg.env_kind << "|" << cfg.grid_size << "|" << cfg.n_obstacles << "|"
    << cfg.horizon << "|" << cfg.window << "|" << cfg.d_z << "|" << cfg.d_m << "|"
    << cfg.hidden << "|" << cfg.m_heads << "|" << cfg.k_c << "|" << cfg.gamma_r << "|"
    << cfg.target_two_head_max;
  return Sha256::hash(o.str()).substr(0, 16);
}

RunConfig config_from_text(const std::string& text) {
  RunConfig cfg;
  std::istringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) {
    size_t eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      size_t a = s.find_first_not_of(" \t");
      if (a == std::string::npos) return std::string();
      size_t b = s.find_last_not_of(" \t");
      return s.substr(a, b - a + 1);
    };
    cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return cfg;
}

struct LoadedModel {
  Model model;
  RunConfig cfg;
  Checkpoint ck;
  std::string digest;
};

LoadedModel load_model(const CliOverrides& cli) {
  if (cli.checkpoint_path.empty()) throw ConfigError("--checkpoint is required");
  LoadedModel lm;
  lm.ck = Checkpoint::load(cli.checkpoint_path);
  auto it = lm.ck.meta.find("config");
  if (it == lm.ck.meta.end())
    throw ConfigError("checkpoint carries no embedded config");
  RunConfig stored = config_from_text(it->second);
  RunConfig cfg = resolve_config(cli);
  if (!cli.config_path.empty() &&
      structure_digest(stored) != structure_digest(config_from_text(
          RunConfig::from_file(cli.config_path).to_text())))
    throw ConfigError("checkpoint/config mismatch: model structure differs; refused");
  // Structural fields always come from the checkpoint; run-level knobs from
  // the CLI-resolved config.
  RunConfig merged = stored;
  merged.shield = cfg.shield;
  merged.ns = cli.ns > 0 ? cli.ns : stored.ns;
  merged.alpha_test = !std::isnan(cli.alpha) ? cli.alpha : stored.alpha_test;
  merged.budget_grid = !cli.budget_grid.empty() ? cli.budget_grid : stored.budget_grid;
  merged.eval_tasks = cli.tasks > 0 ? cli.tasks : stored.eval_tasks;
  merged.eval_episodes = cli.episodes > 0 ? cli.episodes : stored.eval_episodes;
  if (cli.seed >= 0) merged.seed = static_cast<uint64_t>(cli.seed);
  if (!cli.shield.empty()) merged.shield = cli.shield;
  lm.cfg = merged;
  lm.model.cfg = merged.model_config();
  lm.model.init(merged.seed);
  lm.model.read_from(lm.ck);
  lm.digest = lm.ck.digest();
  return lm;
}

std::vector<std::string> run_metadata(const RunConfig& cfg, const std::string& ck_digest) {
  return {"config_digest=" + cfg.digest(),
          "checkpoint_digest=" + (ck_digest.empty() ? "none" : ck_digest)};
}

void ensure_out(const std::string& dir) { fs::create_directories(dir); }

void write_tasks_csv(const std::string& path, const std::vector<TaskEval>& evals,
                     const std::vector<std::string>& meta) {
  CsvWriter w(path);
  w.metadata("qbarrier tasks v1");
  for (const auto& m : meta) w.metadata(m);
  w.header({"task_id", "alpha", "delta", "goal_cell", "obstacles", "v_target"});
  for (size_t i = 0; i < evals.size(); ++i) {
    const TaskSpec& t = evals[i].task;
    std::string obs;
    for (size_t j = 0; j < t.obstacle_cells.size(); ++j)
      obs += (j ? ";" : "") + std::to_string(t.obstacle_cells[j]);
    w.row({std::to_string(i), fmt_f64(t.alpha), fmt_f64(evals[i].delta),
           std::to_string(t.goal_cell), obs, fmt_f64(t.v_target)});
  }
}

// ---------------------------------------------------------------------------

int cmd_train(const CliOverrides& cli) {
  RunConfig cfg = resolve_config(cli);
  ensure_out(cli.out_dir);
  cfg.write(cli.out_dir + "/resolved_config.txt");

  Model model;
  model.cfg = cfg.model_config();
  model.init(cfg.seed);
  TrainConfig tc = cfg.train_config();
  tc.emergency_path = cli.out_dir + "/emergency.ckpt";
  Trainer trainer(model, tc, cfg.seed);

  // Resume from a previous checkpoint when one is supplied.
  if (!cli.checkpoint_path.empty()) {
    Checkpoint prev = Checkpoint::load(cli.checkpoint_path);
    model.read_from(prev);
    if (prev.stores.count("adam_m")) trainer.adam().moments_m() = prev.stores.at("adam_m");
    if (prev.stores.count("adam_v")) trainer.adam().moments_v() = prev.stores.at("adam_v");
    if (prev.meta.count("adam_step"))
      trainer.adam().set_step_count(std::stoll(prev.meta.at("adam_step")));
    if (prev.meta.count("lambda_c"))
      trainer.set_lambda_c(std::stod(prev.meta.at("lambda_c")));
    if (prev.meta.count("epoch")) trainer.set_epoch(std::stoi(prev.meta.at("epoch")));
  }

  CsvWriter log(cli.out_dir + "/training_log.csv");
  log.metadata("qbarrier training log v1");
  log.metadata("config_digest=" + cfg.digest());
  log.header({"epoch", "l_actor", "l_critic", "l_wm", "l_distill", "l_conj", "l_total",
              "lambda_c", "grad_norm", "collect_return", "collect_cost", "eval_return",
              "eval_cost"});
  for (int e = 0; e < cfg.epochs; ++e) {
    EpochReport rep = trainer.train_epoch();
    LossReport m = rep.mean();
    log.row({std::to_string(trainer.epoch() - 1), fmt_f64(m.l_actor),
             fmt_f64(m.l_critic), fmt_f64(m.l_wm), fmt_f64(m.l_distill),
             fmt_f64(m.l_conj), fmt_f64(m.l_total), fmt_f64(rep.lambda_c),
             fmt_f64(m.grad_norm), fmt_f64(rep.collect_avg_return),
             fmt_f64(rep.collect_avg_cost), fmt_f64(rep.eval_return),
             fmt_f64(rep.eval_cost)});
    log.flush();
    std::printf("epoch %3d  total %.4f  critic %.4f  wm %.4f  cost %.3f  ret %.3f\n",
                trainer.epoch() - 1, m.l_total, m.l_critic, m.l_wm,
                rep.collect_avg_cost, rep.collect_avg_return);
  }

  Checkpoint ck;
  model.write_into(ck);
  ck.stores["adam_m"] = trainer.adam().moments_m();
  ck.stores["adam_v"] = trainer.adam().moments_v();
  ck.meta["config"] = cfg.to_text();
  ck.meta["config_digest"] = cfg.digest();
  ck.meta["seed"] = std::to_string(cfg.seed);
  ck.meta["epoch"] = std::to_string(trainer.epoch());
  ck.meta["adam_step"] = std::to_string(trainer.adam().step_count());
  ck.meta["lambda_c"] = fmt_f64(trainer.lambda_c());
  std::string path = cli.out_dir + "/checkpoint.ckpt";
  ck.save(path);
  std::printf("checkpoint: %s\ndigest: %s\n", path.c_str(), ck.digest().c_str());
  return 0;
}

int cmd_eval_adapt(const CliOverrides& cli) {
  LoadedModel lm = load_model(cli);
  ensure_out(cli.out_dir);
  lm.cfg.write(cli.out_dir + "/resolved_config.txt");

  EvalOptions opts;
  opts.n_tasks = lm.cfg.eval_tasks;
  opts.episodes = lm.cfg.eval_episodes;
  opts.alpha = lm.cfg.alpha_test;
  opts.fixed_budget = lm.cfg.eval_budget;
  opts.budget_min = lm.cfg.resolved_budget_min();
  opts.budget_max = lm.cfg.resolved_budget_max();
  opts.shield = lm.cfg.shield_options();
  opts.seed = lm.cfg.seed;

  std::vector<TaskEval> shielded = eval_run(lm.model, opts, 8000);
  EvalOptions base_opts = opts;
  base_opts.shield.mode = ShieldMode::Off;
  std::vector<TaskEval> base = eval_run(lm.model, base_opts, 8000);

  auto meta = run_metadata(lm.cfg, lm.digest);
  CsvWriter w(cli.out_dir + "/rq1.csv");
  w.metadata("qbarrier rq1 v1");
  for (const auto& m : meta) w.metadata(m);
  w.metadata("shield=" + lm.cfg.shield);
  w.header({"task_id", "k", "delta", "return_shield", "cost_shield", "return_base",
            "cost_base"});
  for (int i = 0; i < opts.n_tasks; ++i) {
    for (int k = 0; k < opts.episodes; ++k) {
      w.row({std::to_string(i), std::to_string(k + 1), fmt_f64(shielded[i].delta),
             fmt_f64(shielded[i].result.episodes[k].total_reward()),
             fmt_f64(shielded[i].result.episodes[k].total_cost()),
             fmt_f64(base[i].result.episodes[k].total_reward()),
             fmt_f64(base[i].result.episodes[k].total_cost())});
    }
  }

  AdaptationSummary ss = summarize_adaptation(shielded, opts.episodes);
  AdaptationSummary sb = summarize_adaptation(base, opts.episodes);
  CsvWriter sw(cli.out_dir + "/rq1_summary.csv");
  sw.metadata("qbarrier rq1 summary v1");
  for (const auto& m : meta) sw.metadata(m);
  sw.header({"k", "return_shield_mean", "return_shield_se", "cost_shield_mean",
             "cost_shield_se", "return_base_mean", "return_base_se", "cost_base_mean",
             "cost_base_se"});
  std::vector<double> ks;
  for (int k = 0; k < opts.episodes; ++k) {
    ks.push_back(k + 1);
    sw.row({std::to_string(k + 1), fmt_f64(ss.ret_mean[k]), fmt_f64(ss.ret_se[k]),
            fmt_f64(ss.cost_mean[k]), fmt_f64(ss.cost_se[k]), fmt_f64(sb.ret_mean[k]),
            fmt_f64(sb.ret_se[k]), fmt_f64(sb.cost_mean[k]), fmt_f64(sb.cost_se[k])});
  }

  write_line_chart(cli.out_dir + "/rq1_return.svg", "Per-episode return",
                   "episode k", "return",
                   {{"shield", ks, ss.ret_mean, ss.ret_se},
                    {"base", ks, sb.ret_mean, sb.ret_se}});
  write_line_chart(cli.out_dir + "/rq1_cost.svg", "Per-episode cost", "episode k",
                   "cost",
                   {{"shield", ks, ss.cost_mean, ss.cost_se},
                    {"base", ks, sb.cost_mean, sb.cost_se}});

  std::vector<ContextResult> contexts;
  for (auto& te : shielded) contexts.push_back(std::move(te.result));
  write_trajectory_csv(cli.out_dir + "/eval_trajectory.csv", contexts,
                       lm.model.cfg.env.state_dim(), meta);
  write_decisions_csv(cli.out_dir + "/eval_decisions.csv", contexts, meta);
  write_tasks_csv(cli.out_dir + "/tasks.csv", shielded, meta);
  std::printf("eval-adapt: %d tasks x %d episodes written to %s\n", opts.n_tasks,
              opts.episodes, cli.out_dir.c_str());
  return 0;
}

int cmd_eval_budget(const CliOverrides& cli) {
  LoadedModel lm = load_model(cli);
  ensure_out(cli.out_dir);
  lm.cfg.write(cli.out_dir + "/resolved_config.txt");
  std::vector<double> grid = lm.cfg.resolved_budget_grid();
  if (grid.empty()) throw ConfigError("eval-budget: empty budget grid");

  auto meta = run_metadata(lm.cfg, lm.digest);
  CsvWriter w(cli.out_dir + "/rq2.csv");
  w.metadata("qbarrier rq2 v1");
  for (const auto& m : meta) w.metadata(m);
  w.header({"budget", "task_id", "cumulative_return", "avg_episode_cost", "satisfied"});

  std::vector<double> ret_mean(grid.size(), 0.0), cost_mean(grid.size(), 0.0),
      ret_se(grid.size(), 0.0), cost_se(grid.size(), 0.0);
  for (size_t gi = 0; gi < grid.size(); ++gi) {
    EvalOptions opts;
    opts.n_tasks = lm.cfg.eval_tasks;
    opts.episodes = lm.cfg.eval_episodes;
    opts.alpha = lm.cfg.alpha_test;
    opts.fixed_budget = grid[gi];
    opts.shield = lm.cfg.shield_options();
    opts.seed = lm.cfg.seed;
    std::vector<TaskEval> evals = eval_run(lm.model, opts, 8000 + 100 * gi);
    std::vector<double> rets, costs;
    for (int i = 0; i < opts.n_tasks; ++i) {
      double cum_ret = 0.0, cost_sum = 0.0;
      for (const auto& ep : evals[i].result.episodes) {
        cum_ret += ep.total_reward();
        cost_sum += ep.total_cost();
      }
      double avg_cost = cost_sum / opts.episodes;
      rets.push_back(cum_ret);
      costs.push_back(avg_cost);
      w.row({fmt_f64(grid[gi]), std::to_string(i), fmt_f64(cum_ret), fmt_f64(avg_cost),
             avg_cost <= grid[gi] ? "1" : "0"});
    }
    double rm = 0.0, cm = 0.0;
    for (double v : rets) rm += v;
    for (double v : costs) cm += v;
    rm /= rets.size();
    cm /= costs.size();
    ret_mean[gi] = rm;
    cost_mean[gi] = cm;
    if (rets.size() > 1) {
      double rv = 0.0, cv = 0.0;
      for (double v : rets) rv += (v - rm) * (v - rm);
      for (double v : costs) cv += (v - cm) * (v - cm);
      ret_se[gi] = std::sqrt(rv / (rets.size() - 1)) / std::sqrt(double(rets.size()));
      cost_se[gi] = std::sqrt(cv / (costs.size() - 1)) / std::sqrt(double(costs.size()));
    }
  }

  CsvWriter sw(cli.out_dir + "/rq2_summary.csv");
  sw.metadata("qbarrier rq2 summary v1");
  for (const auto& m : meta) sw.metadata(m);
  sw.header({"budget", "cumulative_return_mean", "cumulative_return_se",
             "avg_episode_cost_mean", "avg_episode_cost_se", "satisfied"});
  for (size_t gi = 0; gi < grid.size(); ++gi)
    sw.row({fmt_f64(grid[gi]), fmt_f64(ret_mean[gi]), fmt_f64(ret_se[gi]),
            fmt_f64(cost_mean[gi]), fmt_f64(cost_se[gi]),
            cost_mean[gi] <= grid[gi] ? "1" : "0"});

  write_line_chart(cli.out_dir + "/rq2_return.svg", "Cumulative return vs budget",
                   "budget", "cumulative return", {{"shield", grid, ret_mean, ret_se}});
  std::vector<PlotSeries> cost_series = {{"shield", grid, cost_mean, cost_se},
                                         {"budget", grid, grid, {}}};
  write_line_chart(cli.out_dir + "/rq2_cost.svg", "Average episode cost vs budget",
                   "budget", "avg episode cost", cost_series);
  std::printf("eval-budget: %zu budgets written to %s\n", grid.size(),
              cli.out_dir.c_str());
  return 0;
}

int cmd_ablate(const CliOverrides& cli) {
  LoadedModel lm = load_model(cli);
  ensure_out(cli.out_dir);
  lm.cfg.write(cli.out_dir + "/resolved_config.txt");
  auto meta = run_metadata(lm.cfg, lm.digest);

  EvalOptions opts;
  opts.n_tasks = lm.cfg.eval_tasks;
  opts.episodes = lm.cfg.eval_episodes;
  opts.alpha = lm.cfg.alpha_test;
  opts.fixed_budget = lm.cfg.eval_budget;
  opts.budget_min = lm.cfg.resolved_budget_min();
  opts.budget_max = lm.cfg.resolved_budget_max();
  opts.seed = lm.cfg.seed;
  opts.shield = lm.cfg.shield_options();

  // Soft versus hard shielding on identical tasks.
  EvalOptions soft_opts = opts;
  soft_opts.shield.mode = ShieldMode::Soft;
  EvalOptions hard_opts = opts;
  hard_opts.shield.mode = ShieldMode::Hard;
  std::vector<TaskEval> soft = eval_run(lm.model, soft_opts, 8000);
  std::vector<TaskEval> hard = eval_run(lm.model, hard_opts, 8000);

  CsvWriter w(cli.out_dir + "/ablate_shield.csv");
  w.metadata("qbarrier ablate shield v1");
  for (const auto& m : meta) w.metadata(m);
  w.header({"task_id", "k", "delta", "return_soft", "cost_soft", "return_hard",
            "cost_hard", "fallback_rate_hard"});
  for (int i = 0; i < opts.n_tasks; ++i) {
    // Fallback rate per task from the hard-mode decision flags.
    int fb = 0, total = 0;
    for (const auto& d : hard[i].result.decisions) {
      fb += d.fallback ? 1 : 0;
      ++total;
    }
    double fb_rate = total > 0 ? static_cast<double>(fb) / total : 0.0;
    for (int k = 0; k < opts.episodes; ++k) {
      w.row({std::to_string(i), std::to_string(k + 1), fmt_f64(soft[i].delta),
             fmt_f64(soft[i].result.episodes[k].total_reward()),
             fmt_f64(soft[i].result.episodes[k].total_cost()),
             fmt_f64(hard[i].result.episodes[k].total_reward()),
             fmt_f64(hard[i].result.episodes[k].total_cost()), fmt_f64(fb_rate)});
    }
  }

  // Candidate-count sweep (continuous action spaces only: enumerated discrete
  // sets make the sample count meaningless).
  if (lm.model.cfg.env.discrete()) {
    std::printf("ablate: ns sweep refused on a discrete action space\n");
    std::printf("ablate: shield-type ablation written to %s\n", cli.out_dir.c_str());
    return 0;
  }
  std::vector<int> ns_grid = {4, 8, 16, 32};
  CsvWriter nw(cli.out_dir + "/ablate_ns.csv");
  nw.metadata("qbarrier ablate ns v1");
  for (const auto& m : meta) nw.metadata(m);
  nw.header({"ns", "task_id", "k", "return", "cost", "fallback_rate"});
  std::vector<std::string> digests;
  for (int ns : ns_grid) {
    EvalOptions no = opts;
    no.shield.mode = lm.cfg.shield_options().mode == ShieldMode::Off
                         ? ShieldMode::Soft
                         : lm.cfg.shield_options().mode;
    no.shield.n_samples = ns;
    std::vector<TaskEval> evals = eval_run(lm.model, no, 8000);
    int fb = 0, total = 0;
    for (int i = 0; i < opts.n_tasks; ++i) {
      for (const auto& d : evals[i].result.decisions) {
        fb += d.fallback ? 1 : 0;
        ++total;
      }
      for (int k = 0; k < opts.episodes; ++k) {
        nw.row({std::to_string(ns), std::to_string(i), std::to_string(k + 1),
                fmt_f64(evals[i].result.episodes[k].total_reward()),
                fmt_f64(evals[i].result.episodes[k].total_cost()),
                fmt_f64(total > 0 ? static_cast<double>(fb) / total : 0.0)});
      }
    }
    std::vector<ContextResult> contexts;
    for (auto& te : evals) contexts.push_back(std::move(te.result));
    std::string dec_path =
        cli.out_dir + "/ablate_ns" + std::to_string(ns) + "_decisions.csv";
    write_decisions_csv(dec_path, contexts, meta);
    std::ifstream df(dec_path, std::ios::binary);
    std::string content((std::istreambuf_iterator<char>(df)),
                        std::istreambuf_iterator<char>());
    digests.push_back(Sha256::hash(content));
  }
  for (size_t i = 0; i < ns_grid.size(); ++i)
    std::printf("ablate: ns=%d decisions digest %s\n", ns_grid[i],
                digests[i].substr(0, 16).c_str());
  std::printf("ablate: outputs written to %s\n", cli.out_dir.c_str());
  return 0;
}

int cmd_diagnose(const CliOverrides& cli) {
  LoadedModel lm = load_model(cli);
  ensure_out(cli.out_dir);
  if (cli.trajectory_path.empty())
    throw ConfigError("diagnose: --trajectory is required");
  std::string dec_path = cli.trajectory_path;
  size_t dot = dec_path.rfind(".csv");
  if (dot == std::string::npos) throw ConfigError("diagnose: expected a .csv log");
  dec_path = dec_path.substr(0, dot) + "_decisions.csv";
  if (!fs::exists(dec_path)) {
    std::string stem = cli.trajectory_path.substr(0, dot);
    size_t us = stem.rfind("_trajectory");
    if (us != std::string::npos)
      dec_path = stem.substr(0, us) + "_decisions.csv";
  }
  if (!fs::exists(dec_path))
    throw ConfigError("diagnose: decisions log not found next to trajectory (" +
                      dec_path + ")");

  std::vector<ContextResult> contexts = load_run(cli.trajectory_path, dec_path);
  if (auto bad = verify_budget_identity(contexts)) {
    std::printf("FAIL budget-identity: context %d episode %d step %d\n",
                bad->context_index, bad->episode_k, bad->t);
    return 2;
  }
  std::printf("ok budget-identity: exact on all logs\n");

  auto records = diagnose(lm.model, contexts);
  DiagSummary summary = summarize(records);
  auto meta = run_metadata(lm.cfg, lm.digest);

  CsvWriter rw(cli.out_dir + "/diag_records.csv");
  rw.metadata("qbarrier diagnostics records v1");
  for (const auto& m : meta) rw.metadata(m);
  rw.header({"context_id", "episode_k", "t", "terminal", "cost", "budget_before",
             "budget_after", "q_sel", "v_t", "v_f", "v_next", "e_pred", "e_v_plus",
             "l_local", "d_bell", "d_sel", "b_q_sel", "b_v_next", "d_bell_mean",
             "e_v_plus_mean", "l_local_mean"});
  int n_records = 0;
  for (const auto& recs : records)
    for (const auto& r : recs) {
      rw.row({std::to_string(r.context_id), std::to_string(r.episode_k),
              std::to_string(r.t), r.terminal ? "1" : "0", fmt_f64(r.cost),
              fmt_f64(r.budget_before), fmt_f64(r.budget_after), fmt_f64(r.q_sel),
              fmt_f64(r.v_t), fmt_f64(r.v_f), fmt_f64(r.v_next), fmt_f64(r.e_pred),
              fmt_f64(r.e_v_plus), fmt_f64(r.l_local), fmt_f64(r.d_bell),
              fmt_f64(r.d_sel), fmt_f64(r.b_q_sel), fmt_f64(r.b_v_next),
              fmt_f64(r.d_bell_mean), fmt_f64(r.e_v_plus_mean),
              fmt_f64(r.l_local_mean)});
      ++n_records;
    }

  CsvWriter sw(cli.out_dir + "/diag_summary.csv");
  sw.metadata("qbarrier diagnostics summary v1");
  for (const auto& m : meta) sw.metadata(m);
  sw.header({"metric", "critic", "mean", "stderr"});
  auto row = [&](const std::string& name, const std::string& critic, DiagStat s) {
    sw.row({name, critic, fmt_f64(s.mean), fmt_f64(s.stderr_)});
  };
  row("e_pred", "-", summary.e_pred);
  row("e_v_plus", "pessimistic", summary.e_v_plus);
  row("e_v_plus", "mean", summary.e_v_plus_mean);
  row("l_local", "pessimistic", summary.l_local);
  row("l_local", "mean", summary.l_local_mean);
  row("bellman_sat_pct", "pessimistic", summary.bellman_sat_pct);
  row("bellman_sat_pct", "mean", summary.bellman_sat_pct_mean);
  row("d_bell", "pessimistic", summary.d_bell);
  row("d_bell", "mean", summary.d_bell_mean);

  TheoremVerdict tv = check_theorem1(records);
  EpisodeBoundVerdict ev = check_episode_bound(records);
  OverlapReport ov = check_overlap(lm.model, contexts, /*eta=*/0.5);
  std::printf("%s margin-decomposition: %d/%d transitions, max residual %.3g\n",
              tv.ok() ? "ok" : "FAIL", tv.n - tv.identity_failures, tv.n,
              tv.max_identity_residual);
  std::printf("%s episode-bound: %zu episodes, %d violations\n",
              ev.ok() ? "ok" : "FAIL", ev.rows.size(), ev.violations);
  std::printf("ok overlap: %d applicable, %d passed, %d skipped\n", ov.applicable,
              ov.passed, ov.skipped);
  std::printf("records: %d, bellman satisfaction (pessimistic): %.1f%%\n", n_records,
              summary.bellman_sat_pct.mean);
  if (!tv.ok() || !ev.ok() || !ov.ok()) return 2;
  return 0;
}

int cmd_spawn_check(const CliOverrides& cli) {
  RunConfig cfg = resolve_config(cli);
  if (cfg.env_kind != "gridworld")
    throw ConfigError("spawn-check: gridworld only");
  ensure_out(cli.out_dir);
  EnvSpec env = cfg.env_spec();
  double alpha = !std::isnan(cli.alpha) ? cli.alpha : cfg.alpha_test;
  int n = cli.tasks > 0 ? cli.tasks : 100000;

  std::vector<double> law = spawn_law(env, alpha);
  std::vector<int> counts(law.size(), 0);
  Rng rng = Rng::derive(cfg.seed, 0x5eed);
  for (int i = 0; i < n; ++i) {
    TaskSpec t = sample_task(env, alpha, rng);
    counts[t.goal_cell]++;
  }
  double tv = 0.0;
  for (size_t i = 0; i < law.size(); ++i)
    tv += std::abs(static_cast<double>(counts[i]) / n - law[i]);
  tv *= 0.5;

  CsvWriter w(cli.out_dir + "/spawn_check.csv");
  w.metadata("qbarrier spawn check v1");
  w.metadata("config_digest=" + cfg.digest());
  w.metadata("alpha=" + fmt_f64(alpha) + " samples=" + std::to_string(n) +
             " tv=" + fmt_f64(tv));
  w.header({"cell", "x", "y", "analytic_p", "empirical_p"});
  for (size_t i = 0; i < law.size(); ++i)
    w.row({std::to_string(i), std::to_string(i % env.grid_size),
           std::to_string(i / env.grid_size), fmt_f64(law[i]),
           fmt_f64(static_cast<double>(counts[i]) / n)});
  std::printf("spawn-check: alpha=%.3g samples=%d TV=%.5f\n", alpha, n, tv);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"budget-aware shielded in-context RL benchmark harness"};
  app.require_subcommand(1);
  CliOverrides cli;

  auto add_common = [&](CLI::App* sub, bool needs_ckpt) {
    sub->add_option("--config", cli.config_path, "config file (flat key = value)");
    auto* ck = sub->add_option("--checkpoint", cli.checkpoint_path, "checkpoint path");
    if (needs_ckpt) ck->required();
    sub->add_option("--out", cli.out_dir, "output directory");
    sub->add_option("--seed", cli.seed, "seed override");
    sub->add_option("--shield", cli.shield, "off|soft|hard")
        ->check(CLI::IsMember({"off", "soft", "hard"}));
    sub->add_option("--ns", cli.ns, "candidate samples (continuous)");
    sub->add_option("--alpha", cli.alpha, "spawn skew for evaluation tasks");
    sub->add_option("--budget-grid", cli.budget_grid, "comma-separated budgets");
    sub->add_option("--tasks", cli.tasks, "number of evaluation tasks");
    sub->add_option("--episodes", cli.episodes, "in-context episodes per task");
  };

  CLI::App* train = app.add_subcommand("train", "train all modules");
  add_common(train, false);
  train->add_option("--epochs", cli.epochs, "epoch count override");

  CLI::App* adapt = app.add_subcommand("eval-adapt", "in-context adaptation eval");
  add_common(adapt, true);

  CLI::App* budget = app.add_subcommand("eval-budget", "budget sweep eval");
  add_common(budget, true);

  CLI::App* ablate = app.add_subcommand("ablate", "shield-type and candidate sweeps");
  add_common(ablate, true);

  CLI::App* diagnose = app.add_subcommand("diagnose", "margin diagnostics over logs");
  add_common(diagnose, true);
  diagnose->add_option("--trajectory", cli.trajectory_path, "trajectory CSV")
      ->required();

  CLI::App* spawn = app.add_subcommand("spawn-check", "task sampler fidelity");
  add_common(spawn, false);

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) return cmd_train(cli);
    if (adapt->parsed()) return cmd_eval_adapt(cli);
    if (budget->parsed()) return cmd_eval_budget(cli);
    if (ablate->parsed()) return cmd_ablate(cli);
    if (diagnose->parsed()) return cmd_diagnose(cli);
    if (spawn->parsed()) return cmd_spawn_check(cli);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}
