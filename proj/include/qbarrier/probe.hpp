// Post-hoc diagnostics over logged, shielded trajectories: per-transition
// latent prediction error, induced value perturbation, a local
// finite-difference sensitivity proxy, Bellman upper-bound residuals and
// selection gaps, plus machine checks of the one-step margin decomposition,
// the telescoped episode budget bound, and the conditional overlap of
// consecutive affordable candidate sets.
#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qbarrier/cmdp.hpp"
#include "qbarrier/codec.hpp"
#include "qbarrier/critics.hpp"
#include "qbarrier/errors.hpp"
#include "qbarrier/model.hpp"
#include "qbarrier/world_model.hpp"

namespace qb {

constexpr double kLipschitzEps = 1e-8;
constexpr double kBellmanSatThreshold = 1e-6;

struct DiagRecord {
  int context_id = 0;
  int episode_k = 0;
  int t = 0;
  bool terminal = false;  // last transition of its episode (next value forced to 0)
  double cost = 0.0;
  double budget_before = 0.0;
  double budget_after = 0.0;
  // Pessimistic-critic quantities.
  double q_sel = 0.0;    // Q+(z_t, A_t)
  double v_t = 0.0;      // min over current candidates of Q+(z_t, .)
  double v_f = 0.0;      // min over next candidates of Q+(f_z(z_t, A_t), .)
  double v_next = 0.0;   // min over next candidates of Q+(z_{t+1}, .)
  double e_pred = 0.0;   // || f_z(z_t, A_t) - z_{t+1} ||_2
  double e_v_plus = 0.0; // | v_f - v_next |
  double l_local = 0.0;  // finite-difference sensitivity proxy (NaN on terminal)
  double d_bell = 0.0;   // [ C + v_f - q_sel ]_+
  double d_sel = 0.0;    // q_sel - v_t
  double b_q_sel = 0.0;  // budget_before - q_sel
  double b_v_next = 0.0; // budget_after - v_next
  // Ensemble-mean critic variants.
  double q_sel_mean = 0.0, v_f_mean = 0.0, v_next_mean = 0.0;
  double e_v_plus_mean = 0.0, l_local_mean = 0.0, d_bell_mean = 0.0;
};

// Hooks let tests substitute exact critics or oracle dynamics for the learned
// models; the production path wires them to the frozen model.
struct ProbeHooks {
  // World latent at a decision point, given history so far and the observation.
  std::function<std::vector<double>(std::span<const Transition>,
                                    const std::vector<float>&)>
      encode_zw;
  std::function<double(const std::vector<double>&, const std::vector<float>&)> q_plus;
  std::function<double(const std::vector<double>&, const std::vector<float>&)> q_mean;
  // Predictive mean of the next world latent.
  std::function<std::vector<double>(const std::vector<double>&,
                                    const std::vector<float>&)>
      f_z;
};

inline ProbeHooks model_hooks(const Model& model) {
  const ModelConfig& cfg = model.cfg;
  ProbeHooks h;
  h.encode_zw = [&model](std::span<const Transition> hist,
                         const std::vector<float>& obs) {
    ContextWindow w = make_window(model.cfg.env, model.cfg.codec.window, hist, obs);
    LatentTriple lat = encode(model.codec, model.cfg.codec, model.cfg.env, w);
    return lat.z_w;
  };
  h.q_plus = [&model](const std::vector<double>& z, const std::vector<float>& a) {
    return q_plus(model.qc, model.cfg.critic, model.cfg.codec.d_m, model.cfg.env, z, a);
  };
  h.q_mean = [&model](const std::vector<double>& z, const std::vector<float>& a) {
    return q_mean(model.qc, model.cfg.critic, model.cfg.codec.d_m, model.cfg.env, z, a);
  };
  h.f_z = [&model](const std::vector<double>& z, const std::vector<float>& a) {
    return wm_predict(model.wm, model.cfg.wm, model.cfg.env, z, a).mean;
  };
  (void)cfg;
  return h;
}

inline double l2_distance(const std::vector<double>& a, const std::vector<double>& b) {
  double sq = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    double d = a[i] - b[i];
    sq += d * d;
  }
  return std::sqrt(sq);
}

namespace detail {
inline double candidate_min(
    const std::function<double(const std::vector<double>&, const std::vector<float>&)>& q,
    const std::vector<double>& z, const std::vector<std::vector<float>>& cands) {
  double best = q(z, cands[0]);
  for (size_t i = 1; i < cands.size(); ++i) best = std::min(best, q(z, cands[i]));
  return best;
}
}  // namespace detail

// Per-transition diagnostics for one context. The logged decisions must cover
// every step; the step t record needs the step t+1 candidate set (shared
// between the predicted and realized next latents), with the terminal value
// forced to zero on each episode's last transition.
inline std::vector<DiagRecord> diagnose_context(const ProbeHooks& hooks,
                                                const ContextResult& ctx) {
  size_t n_steps = 0;
  for (const auto& ep : ctx.episodes) n_steps += ep.transitions.size();
  if (ctx.decisions.size() != n_steps)
    throw ContractError(
        "diagnose: decision log does not cover every transition (candidate sets "
        "unavailable)");

  std::vector<DiagRecord> out;
  std::vector<Transition> history;
  size_t di = 0;
  for (size_t ek = 0; ek < ctx.episodes.size(); ++ek) {
    const EpisodeLog& ep = ctx.episodes[ek];
    size_t T = ep.transitions.size();
    for (size_t t = 0; t < T; ++t) {
      const Transition& tr = ep.transitions[t];
      const ShieldDecision& dec = ctx.decisions[di];
      const ShieldDecision* next_dec = (t + 1 < T) ? &ctx.decisions[di + 1] : nullptr;

      std::vector<double> z_t = hooks.encode_zw(
          std::span<const Transition>(history.data(), history.size()), tr.state);
      // History including this transition feeds the next-step latent.
      history.push_back(tr);
      std::vector<double> z_next = hooks.encode_zw(
          std::span<const Transition>(history.data(), history.size()), tr.next_state);

      DiagRecord r;
      r.context_id = dec.context_id;
      r.episode_k = dec.episode_k;
      r.t = dec.t;
      r.terminal = (next_dec == nullptr);
      r.cost = tr.cost;
      r.budget_before = ep.budget_trace[t];
      r.budget_after = ep.budget_trace[t + 1];

      const std::vector<float>& a_sel = tr.action;
      r.q_sel = hooks.q_plus(z_t, a_sel);
      r.q_sel_mean = hooks.q_mean(z_t, a_sel);
      r.v_t = detail::candidate_min(hooks.q_plus, z_t, dec.candidates);
      r.d_sel = r.q_sel - r.v_t;

      std::vector<double> f = hooks.f_z(z_t, a_sel);
      r.e_pred = l2_distance(f, z_next);

      if (r.terminal) {
        r.v_f = 0.0;
        r.v_next = 0.0;
        r.v_f_mean = 0.0;
        r.v_next_mean = 0.0;
        r.e_v_plus = 0.0;
        r.e_v_plus_mean = 0.0;
        r.l_local = std::numeric_limits<double>::quiet_NaN();
        r.l_local_mean = std::numeric_limits<double>::quiet_NaN();
      } else {
        const auto& cands = next_dec->candidates;
        r.v_f = detail::candidate_min(hooks.q_plus, f, cands);
        r.v_next = detail::candidate_min(hooks.q_plus, z_next, cands);
        r.v_f_mean = detail::candidate_min(hooks.q_mean, f, cands);
        r.v_next_mean = detail::candidate_min(hooks.q_mean, z_next, cands);
        r.e_v_plus = std::abs(r.v_f - r.v_next);
        r.e_v_plus_mean = std::abs(r.v_f_mean - r.v_next_mean);
        double denom = r.e_pred + kLipschitzEps;
        double num = 0.0, num_mean = 0.0;
        for (const auto& a : cands) {
          num = std::max(num, std::abs(hooks.q_plus(f, a) - hooks.q_plus(z_next, a)));
          num_mean = std::max(
              num_mean, std::abs(hooks.q_mean(f, a) - hooks.q_mean(z_next, a)));
        }
        r.l_local = num / denom;
        r.l_local_mean = num_mean / denom;
      }
      r.d_bell = std::max(0.0, r.cost + r.v_f - r.q_sel);
      r.d_bell_mean = std::max(0.0, r.cost + r.v_f_mean - r.q_sel_mean);
      r.b_q_sel = r.budget_before - r.q_sel;
      r.b_v_next = r.budget_after - r.v_next;
      out.push_back(r);
      ++di;
    }
  }
  return out;
}

inline std::vector<std::vector<DiagRecord>> diagnose(
    const ProbeHooks& hooks, const std::vector<ContextResult>& contexts) {
  std::vector<std::vector<DiagRecord>> out;
  out.reserve(contexts.size());
  for (const auto& ctx : contexts) out.push_back(diagnose_context(hooks, ctx));
  return out;
}

inline std::vector<std::vector<DiagRecord>> diagnose(
    const Model& model, const std::vector<ContextResult>& contexts) {
  return diagnose(model_hooks(model), contexts);
}

// ---------------------------------------------------------------------------
// Summaries: aggregate within each rollout, then mean and standard error
// across rollouts.

struct DiagStat {
  double mean = 0.0;
  double stderr_ = 0.0;
  int n = 0;
};

inline DiagStat across_rollouts(const std::vector<double>& per_rollout) {
  DiagStat s;
  s.n = static_cast<int>(per_rollout.size());
  if (s.n == 0) return s;
  for (double v : per_rollout) s.mean += v;
  s.mean /= s.n;
  if (s.n > 1) {
    double sq = 0.0;
    for (double v : per_rollout) sq += (v - s.mean) * (v - s.mean);
    s.stderr_ = std::sqrt(sq / (s.n - 1)) / std::sqrt(static_cast<double>(s.n));
  }
  return s;
}

struct DiagSummary {
  DiagStat e_pred;
  DiagStat e_v_plus, l_local, d_bell, bellman_sat_pct;
  DiagStat e_v_plus_mean, l_local_mean, d_bell_mean, bellman_sat_pct_mean;
  int n_records = 0;
};

inline DiagSummary summarize(const std::vector<std::vector<DiagRecord>>& per_ctx) {
  std::vector<double> e_pred, ev, ll, db, sat, evm, llm, dbm, satm;
  DiagSummary s;
  for (const auto& recs : per_ctx) {
    if (recs.empty()) continue;
    s.n_records += static_cast<int>(recs.size());
    double a_ep = 0, a_ev = 0, a_db = 0, a_evm = 0, a_dbm = 0;
    double a_ll = 0, a_llm = 0;
    int n = 0, n_ll = 0;
    int n_sat = 0, n_satm = 0;
    for (const auto& r : recs) {
      a_ep += r.e_pred;
      a_ev += r.e_v_plus;
      a_db += r.d_bell;
      a_evm += r.e_v_plus_mean;
      a_dbm += r.d_bell_mean;
      if (r.d_bell <= kBellmanSatThreshold) ++n_sat;
      if (r.d_bell_mean <= kBellmanSatThreshold) ++n_satm;
      if (!r.terminal) {
        a_ll += r.l_local;
        a_llm += r.l_local_mean;
        ++n_ll;
      }
      ++n;
    }
    e_pred.push_back(a_ep / n);
    ev.push_back(a_ev / n);
    db.push_back(a_db / n);
    evm.push_back(a_evm / n);
    dbm.push_back(a_dbm / n);
    sat.push_back(100.0 * n_sat / n);
    satm.push_back(100.0 * n_satm / n);
    if (n_ll > 0) {
      ll.push_back(a_ll / n_ll);
      llm.push_back(a_llm / n_ll);
    }
  }
  s.e_pred = across_rollouts(e_pred);
  s.e_v_plus = across_rollouts(ev);
  s.l_local = across_rollouts(ll);
  s.d_bell = across_rollouts(db);
  s.bellman_sat_pct = across_rollouts(sat);
  s.e_v_plus_mean = across_rollouts(evm);
  s.l_local_mean = across_rollouts(llm);
  s.d_bell_mean = across_rollouts(dbm);
  s.bellman_sat_pct_mean = across_rollouts(satm);
  return s;
}

// ---------------------------------------------------------------------------
// Machine checks.

struct TheoremVerdict {
  int n = 0;
  int identity_failures = 0;
  int inequality_violations = 0;
  double max_identity_residual = 0.0;
  std::optional<std::pair<int, int>> first_failure;  // (context index, record index)

  bool ok() const { return identity_failures == 0 && inequality_violations == 0; }
};

// The next-step state margin must decompose exactly into the current action
// margin, the signed one-step Bellman gap at the predicted latent, and the
// value perturbation between predicted and realized next latents; the hinged
// inequality then follows. Residuals above tolerance flag bookkeeping bugs.
inline TheoremVerdict check_theorem1(
    const std::vector<std::vector<DiagRecord>>& per_ctx, double tol = 1e-4) {
  TheoremVerdict v;
  for (size_t c = 0; c < per_ctx.size(); ++c) {
    const auto& recs = per_ctx[c];
    for (size_t i = 0; i < recs.size(); ++i) {
      const DiagRecord& r = recs[i];
      ++v.n;
      double reconstructed =
          r.b_q_sel + (r.q_sel - r.cost - r.v_f) + (r.v_f - r.v_next);
      double residual = std::abs(r.b_v_next - reconstructed);
      v.max_identity_residual = std::max(v.max_identity_residual, residual);
      if (residual > tol) {
        ++v.identity_failures;
        if (!v.first_failure) v.first_failure = {static_cast<int>(c), static_cast<int>(i)};
      }
      double lower = r.b_q_sel - r.d_bell - r.e_v_plus;
      if (r.b_v_next < lower - 1e-9) {
        ++v.inequality_violations;
        if (!v.first_failure) v.first_failure = {static_cast<int>(c), static_cast<int>(i)};
      }
    }
  }
  return v;
}

struct EpisodeBoundRow {
  int context_id = 0;
  int episode_k = 0;
  double g_c = 0.0;
  double delta = 0.0;
  double b_v0 = 0.0;
  double residual_sum = 0.0;  // sum of d_sel + d_bell + e_v_plus over steps
  double slack = 0.0;         // rhs - lhs, >= 0 when the bound holds
  bool ok = false;
};

struct EpisodeBoundVerdict {
  std::vector<EpisodeBoundRow> rows;
  int violations = 0;
  bool ok() const { return violations == 0; }
};

// Telescoped episode bound with the terminal value forced to zero:
//   G_c - delta <= -b_{V,0} + sum_t (d_sel + d_bell + e_v_plus).
inline EpisodeBoundVerdict check_episode_bound(
    const std::vector<std::vector<DiagRecord>>& per_ctx, double tol = 1e-9) {
  EpisodeBoundVerdict verdict;
  for (const auto& recs : per_ctx) {
    size_t i = 0;
    while (i < recs.size()) {
      EpisodeBoundRow row;
      row.context_id = recs[i].context_id;
      row.episode_k = recs[i].episode_k;
      double delta = recs[i].budget_before;  // B_0 at the episode start
      row.delta = delta;
      row.b_v0 = delta - recs[i].v_t;
      size_t j = i;
      while (j < recs.size() && recs[j].episode_k == row.episode_k &&
             recs[j].context_id == row.context_id) {
        row.g_c += recs[j].cost;
        row.residual_sum += recs[j].d_sel + recs[j].d_bell + recs[j].e_v_plus;
        if (recs[j].terminal) {
          ++j;
          break;
        }
        ++j;
      }
      double lhs = row.g_c - delta;
      double rhs = -row.b_v0 + row.residual_sum;
      row.slack = rhs - lhs;
      row.ok = lhs <= rhs + tol;
      if (!row.ok) ++verdict.violations;
      verdict.rows.push_back(row);
      i = j;
    }
  }
  return verdict;
}

struct OverlapReport {
  int pairs_considered = 0;   // consecutive pairs sharing at least one action
  int applicable = 0;         // margin and drift conditions both satisfied
  int passed = 0;             // applicable cases where the action stayed affordable
  int skipped = 0;            // shared action present but preconditions failed
  bool ok() const { return passed == applicable; }
};

// Conditional overlap of consecutive affordable candidate sets, using the
// measured per-pair critic drift |Q+(z', A) - Q+(z, A)| in place of a global
// Lipschitz constant: whenever Q+(z_t, A) <= B_t - eta and
// |dQ| + |dB| <= eta, the action must remain affordable at t+1.
inline OverlapReport check_overlap(const ProbeHooks& hooks,
                                   const std::vector<ContextResult>& contexts,
                                   double eta) {
  if (eta <= 0.0) throw ContractError("check_overlap: eta must be positive");
  OverlapReport rep;
  for (const auto& ctx : contexts) {
    size_t n_steps = 0;
    for (const auto& ep : ctx.episodes) n_steps += ep.transitions.size();
    if (ctx.decisions.size() != n_steps)
      throw ContractError("check_overlap: decision log does not cover every step");
    std::vector<Transition> history;
    size_t di = 0;
    for (const auto& ep : ctx.episodes) {
      size_t T = ep.transitions.size();
      std::vector<std::vector<double>> zs(T);
      for (size_t t = 0; t < T; ++t) {
        zs[t] = hooks.encode_zw(
            std::span<const Transition>(history.data(), history.size()),
            ep.transitions[t].state);
        history.push_back(ep.transitions[t]);
      }
      for (size_t t = 0; t + 1 < T; ++t) {
        const ShieldDecision& d0 = ctx.decisions[di + t];
        const ShieldDecision& d1 = ctx.decisions[di + t + 1];
        double b0 = ep.budget_trace[t], b1 = ep.budget_trace[t + 1];
        for (const auto& a : d0.candidates) {
          bool shared = false;
          for (const auto& a1 : d1.candidates)
            if (a1 == a) { shared = true; break; }
          if (!shared) continue;
          ++rep.pairs_considered;
          double q0 = hooks.q_plus(zs[t], a);
          if (q0 > b0 - eta) { ++rep.skipped; continue; }
          double q1 = hooks.q_plus(zs[t + 1], a);
          double drift = std::abs(q1 - q0) + std::abs(b1 - b0);
          if (drift > eta) { ++rep.skipped; continue; }
          ++rep.applicable;
          if (q1 <= b1) ++rep.passed;
        }
      }
      di += T;
    }
  }
  return rep;
}

inline OverlapReport check_overlap(const Model& model,
                                   const std::vector<ContextResult>& contexts,
                                   double eta) {
  return check_overlap(model_hooks(model), contexts, eta);
}

// B_t must equal delta minus the running cost sum at every step; returns the
// (context, episode, step) of the first violation if any.
struct BudgetViolation {
  int context_index = 0;
  int episode_k = 0;
  int t = 0;
};

inline std::optional<BudgetViolation> verify_budget_identity(
    const std::vector<ContextResult>& contexts) {
  for (size_t c = 0; c < contexts.size(); ++c) {
    for (size_t k = 0; k < contexts[c].episodes.size(); ++k) {
      const EpisodeLog& ep = contexts[c].episodes[k];
      if (ep.budget_trace.size() != ep.transitions.size() + 1)
        return BudgetViolation{static_cast<int>(c), static_cast<int>(k) + 1, 0};
      double cum = 0.0;
      if (ep.budget_trace[0] != ep.delta)
        return BudgetViolation{static_cast<int>(c), static_cast<int>(k) + 1, 0};
      for (size_t t = 0; t < ep.transitions.size(); ++t) {
        cum += static_cast<double>(ep.transitions[t].cost);
        if (ep.budget_trace[t + 1] != ep.delta - cum)
          return BudgetViolation{static_cast<int>(c), static_cast<int>(k) + 1,
                                 static_cast<int>(t)};
      }
    }
  }
  return std::nullopt;
}

}  // namespace qb
