// Trajectory and decision logs. A run is stored as two CSV files: one row per
// transition (states, action, reward, cost, flags, remaining budget) and one
// row per shield decision with per-candidate columns. Float fields are
// printed with round-trip precision so logs reload bit-exactly.
#pragma once

#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "qbarrier/cmdp.hpp"
#include "qbarrier/csv.hpp"
#include "qbarrier/decision.hpp"
#include "qbarrier/errors.hpp"

namespace qb {

inline std::vector<std::string> trajectory_header(int state_dim) {
  std::vector<std::string> h = {"context_id", "episode_k", "t"};
  for (int i = 0; i < state_dim; ++i) h.push_back("state" + std::to_string(i));
  h.insert(h.end(), {"action", "reward", "cost", "done", "d_ctx", "budget_remaining"});
  for (int i = 0; i < state_dim; ++i) h.push_back("next_state" + std::to_string(i));
  return h;
}

inline void write_trajectory_csv(const std::string& path,
                                 const std::vector<ContextResult>& contexts,
                                 int state_dim,
                                 const std::vector<std::string>& metadata = {}) {
  CsvWriter w(path);
  w.metadata("qbarrier trajectory v1");
  for (const auto& m : metadata) w.metadata(m);
  for (size_t c = 0; c < contexts.size(); ++c)
    w.metadata("context " + std::to_string(c) + " delta=" + fmt_f64(contexts[c].delta));
  w.header(trajectory_header(state_dim));
  for (size_t c = 0; c < contexts.size(); ++c) {
    const ContextResult& ctx = contexts[c];
    for (size_t k = 0; k < ctx.episodes.size(); ++k) {
      const EpisodeLog& ep = ctx.episodes[k];
      for (size_t t = 0; t < ep.transitions.size(); ++t) {
        const Transition& tr = ep.transitions[t];
        std::vector<std::string> cells = {std::to_string(c), std::to_string(k + 1),
                                          std::to_string(t)};
        for (float s : tr.state) cells.push_back(fmt_f32(s));
        cells.push_back(fmt_f32(tr.action.at(0)));
        cells.push_back(fmt_f32(tr.reward));
        cells.push_back(fmt_f32(tr.cost));
        cells.push_back(tr.done ? "1" : "0");
        cells.push_back(tr.d_ctx ? "1" : "0");
        cells.push_back(fmt_f64(ep.budget_trace[t + 1]));
        for (float s : tr.next_state) cells.push_back(fmt_f32(s));
        w.row(cells);
      }
    }
  }
}

inline void write_decisions_csv(const std::string& path,
                                const std::vector<ContextResult>& contexts,
                                const std::vector<std::string>& metadata = {}) {
  size_t max_cand = 0;
  for (const auto& ctx : contexts)
    for (const auto& d : ctx.decisions) max_cand = std::max(max_cand, d.candidates.size());
  CsvWriter w(path);
  w.metadata("qbarrier decisions v1");
  for (const auto& m : metadata) w.metadata(m);
  std::vector<std::string> h = {"context_id", "episode_k", "t",       "mode",
                                "origin",     "fallback",  "budget",  "b_v",
                                "chosen",     "n_candidates"};
  for (size_t i = 0; i < max_cand; ++i) {
    std::string p = "cand" + std::to_string(i);
    h.push_back(p + "_a");
    h.push_back(p + "_rho");
    h.push_back(p + "_qplus");
    h.push_back(p + "_bq");
    h.push_back(p + "_p");
  }
  w.header(h);
  for (const auto& ctx : contexts) {
    for (const auto& d : ctx.decisions) {
      std::vector<std::string> cells = {
          std::to_string(d.context_id), std::to_string(d.episode_k), std::to_string(d.t),
          d.mode, d.origin, d.fallback ? "1" : "0", fmt_f64(d.budget), fmt_f64(d.b_v),
          std::to_string(d.chosen), std::to_string(d.candidates.size())};
      for (size_t i = 0; i < max_cand; ++i) {
        if (i < d.candidates.size()) {
          cells.push_back(fmt_f32(d.candidates[i].at(0)));
          cells.push_back(fmt_f64(d.rho[i]));
          cells.push_back(fmt_f64(d.q_plus[i]));
          cells.push_back(fmt_f64(d.b_q[i]));
          cells.push_back(fmt_f64(d.probs[i]));
        } else {
          for (int j = 0; j < 5; ++j) cells.push_back("");
        }
      }
      w.row(cells);
    }
  }
}

// Reloads a run from its two CSV files. Task layouts are not part of the log;
// the returned contexts carry transitions, budget traces and decisions, which
// is what the diagnostics need.
inline std::vector<ContextResult> load_run(const std::string& trajectory_path,
                                           const std::string& decisions_path) {
  CsvFile tf = read_csv(trajectory_path);
  if (tf.header.empty()) throw ConfigError("load_run: empty trajectory file");

  // Per-context budgets from metadata.
  std::map<int, double> deltas;
  for (const auto& m : tf.metadata) {
    std::istringstream ss(m);
    std::string word;
    ss >> word;
    if (word != "context") continue;
    int id;
    ss >> id;
    ss >> word;
    if (word.rfind("delta=", 0) == 0) deltas[id] = std::stod(word.substr(6));
  }

  int state_dim = 0;
  while (true) {
    bool found = false;
    for (const auto& hcol : tf.header)
      if (hcol == "state" + std::to_string(state_dim)) found = true;
    if (!found) break;
    ++state_dim;
  }
  if (state_dim == 0) throw ConfigError("load_run: no state columns");

  int c_ctx = tf.col("context_id"), c_k = tf.col("episode_k"), c_t = tf.col("t");
  int c_s0 = tf.col("state0");
  int c_a = tf.col("action"), c_r = tf.col("reward"), c_c = tf.col("cost");
  int c_done = tf.col("done"), c_dctx = tf.col("d_ctx");
  int c_budget = tf.col("budget_remaining");
  int c_ns0 = tf.col("next_state0");

  std::vector<ContextResult> contexts;
  int cur_ctx = -1, cur_k = -1;
  for (const auto& row : tf.rows) {
    int ctx_id = std::stoi(row[c_ctx]);
    int k = std::stoi(row[c_k]);
    if (ctx_id != cur_ctx) {
      if (ctx_id != static_cast<int>(contexts.size()))
        throw ConfigError("load_run: context ids must be consecutive");
      contexts.emplace_back();
      auto dit = deltas.find(ctx_id);
      if (dit == deltas.end())
        throw ConfigError("load_run: missing delta metadata for context " +
                          std::to_string(ctx_id));
      contexts.back().delta = dit->second;
      cur_ctx = ctx_id;
      cur_k = -1;
    }
    ContextResult& ctx = contexts.back();
    if (k != cur_k) {
      ctx.episodes.emplace_back();
      ctx.episodes.back().delta = ctx.delta;
      ctx.episodes.back().budget_trace.push_back(ctx.delta);
      cur_k = k;
    }
    EpisodeLog& ep = ctx.episodes.back();
    Transition tr;
    for (int i = 0; i < state_dim; ++i)
      tr.state.push_back(std::stof(row[c_s0 + i]));
    tr.action = {std::stof(row[c_a])};
    tr.reward = std::stof(row[c_r]);
    tr.cost = std::stof(row[c_c]);
    tr.done = row[c_done] == "1";
    tr.d_ctx = row[c_dctx] == "1";
    for (int i = 0; i < state_dim; ++i)
      tr.next_state.push_back(std::stof(row[c_ns0 + i]));
    (void)c_t;
    ep.budget_trace.push_back(std::stod(row[c_budget]));
    ep.transitions.push_back(std::move(tr));
  }

  CsvFile df = read_csv(decisions_path);
  if (df.header.empty()) throw ConfigError("load_run: empty decisions file");
  int d_ctx_col = df.col("context_id"), d_k = df.col("episode_k"), d_t = df.col("t");
  int d_mode = df.col("mode"), d_origin = df.col("origin"), d_fb = df.col("fallback");
  int d_budget = df.col("budget"), d_bv = df.col("b_v"), d_chosen = df.col("chosen");
  int d_n = df.col("n_candidates");
  for (const auto& row : df.rows) {
    ShieldDecision d;
    d.context_id = std::stoi(row[d_ctx_col]);
    d.episode_k = std::stoi(row[d_k]);
    d.t = std::stoi(row[d_t]);
    d.mode = row[d_mode];
    d.origin = row[d_origin];
    d.fallback = row[d_fb] == "1";
    d.budget = std::stod(row[d_budget]);
    d.b_v = std::stod(row[d_bv]);
    d.chosen = std::stoi(row[d_chosen]);
    int n = std::stoi(row[d_n]);
    for (int i = 0; i < n; ++i) {
      int base = df.col("cand" + std::to_string(i) + "_a");
      d.candidates.push_back({std::stof(row[base])});
      d.rho.push_back(std::stod(row[base + 1]));
      d.q_plus.push_back(std::stod(row[base + 2]));
      d.b_q.push_back(std::stod(row[base + 3]));
      d.probs.push_back(std::stod(row[base + 4]));
    }
    if (d.context_id < 0 || d.context_id >= static_cast<int>(contexts.size()))
      throw ConfigError("load_run: decision references unknown context");
    contexts[d.context_id].decisions.push_back(std::move(d));
  }
  return contexts;
}

}  // namespace qb
