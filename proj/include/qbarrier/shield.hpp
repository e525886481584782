// Budget-aware action shield. Candidate actions are scored by the pessimistic
// cost critic against the remaining budget; the soft variant exponentially
// downweights candidates predicted to overspend while preserving support, the
// hard variant truncates to the affordable set with a lowest-predicted-cost
// fallback when that set is empty.
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "qbarrier/cmdp.hpp"
#include "qbarrier/codec.hpp"
#include "qbarrier/critics.hpp"
#include "qbarrier/decision.hpp"
#include "qbarrier/errors.hpp"
#include "qbarrier/model.hpp"
#include "qbarrier/policy.hpp"

namespace qb {

enum class ShieldMode { Off, Soft, Hard };

inline std::string to_string(ShieldMode m) {
  switch (m) {
    case ShieldMode::Off: return "off";
    case ShieldMode::Soft: return "soft";
    case ShieldMode::Hard: return "hard";
  }
  return "?";
}

inline ShieldMode shield_mode_from_string(const std::string& s) {
  if (s == "off") return ShieldMode::Off;
  if (s == "soft") return ShieldMode::Soft;
  if (s == "hard") return ShieldMode::Hard;
  throw ConfigError("unknown shield mode: " + s);
}

constexpr double kTieTol = 1e-9;

struct BarrierValues {
  double b_v = 0.0;             // budget minus the cheapest predicted cost
  std::vector<double> b_q;      // per-candidate margin: budget - q_plus
};

inline BarrierValues barriers(const std::vector<double>& q_plus_values, double budget) {
  if (q_plus_values.empty()) throw ContractError("barriers: empty candidate set");
  BarrierValues out;
  out.b_q.resize(q_plus_values.size());
  double qmin = q_plus_values[0];
  for (size_t i = 0; i < q_plus_values.size(); ++i) {
    out.b_q[i] = budget - q_plus_values[i];
    qmin = std::min(qmin, q_plus_values[i]);
  }
  out.b_v = budget - qmin;
  return out;
}

// Unnormalized soft-shield scores: rho * exp(-beta * [-b_q]_+).
inline std::vector<double> soft_shield_weights(const std::vector<double>& rho,
                                               const std::vector<double>& b_q,
                                               double temperature = 1.0) {
  if (rho.size() != b_q.size() || rho.empty())
    throw ContractError("soft_shield: bad candidate arrays");
  std::vector<double> w(rho.size());
  for (size_t i = 0; i < rho.size(); ++i)
    w[i] = rho[i] * std::exp(-temperature * std::max(-b_q[i], 0.0));
  return w;
}

inline std::vector<double> soft_shield(const std::vector<double>& rho,
                                       const std::vector<double>& b_q,
                                       double temperature = 1.0) {
  std::vector<double> w = soft_shield_weights(rho, b_q, temperature);
  double total = 0.0;
  for (double v : w) total += v;
  if (total <= 0.0)
    throw ContractError("soft_shield: zero total weight (all base weights zero)");
  for (auto& v : w) v /= total;
  return w;
}

struct HardShieldResult {
  std::vector<double> probs;
  bool fallback = false;
  std::vector<int> tie_set;  // argmin-cost candidates when falling back
};

inline HardShieldResult hard_shield(const std::vector<double>& rho,
                                    const std::vector<double>& b_q,
                                    const std::vector<double>& q_plus_values,
                                    double tie_tol = kTieTol) {
  if (rho.size() != b_q.size() || rho.size() != q_plus_values.size() || rho.empty())
    throw ContractError("hard_shield: bad candidate arrays");
  HardShieldResult out;
  out.probs.assign(rho.size(), 0.0);
  double safe_mass = 0.0;
  for (size_t i = 0; i < rho.size(); ++i)
    if (b_q[i] >= 0.0) safe_mass += rho[i];
  if (safe_mass > 0.0) {
    for (size_t i = 0; i < rho.size(); ++i)
      if (b_q[i] >= 0.0) out.probs[i] = rho[i] / safe_mass;
    return out;
  }
  // Empty (or zero-mass) safe set: uniform over the cheapest candidates.
  out.fallback = true;
  double qmin = q_plus_values[0];
  for (double q : q_plus_values) qmin = std::min(qmin, q);
  for (size_t i = 0; i < rho.size(); ++i)
    if (std::abs(q_plus_values[i] - qmin) <= tie_tol)
      out.tie_set.push_back(static_cast<int>(i));
  for (int i : out.tie_set)
    out.probs[i] = 1.0 / static_cast<double>(out.tie_set.size());
  return out;
}

struct ShieldOptions {
  ShieldMode mode = ShieldMode::Soft;
  int n_samples = 8;          // candidate samples in continuous action spaces
  double temperature = 1.0;   // scale on the soft-shield hinge
};

// One shielded action selection over frozen parameters: encode the window,
// build the candidate set (full enumeration for discrete actions, n_samples
// base-policy samples for continuous), score every candidate with the
// pessimistic cost critic, apply the shield mode and sample.
inline ShieldDecision select_action(const Model& model, const ContextWindow& window,
                                    double budget, const ShieldOptions& opts, Rng& rng,
                                    const std::string& snapshot_tag = "") {
  const ModelConfig& cfg = model.cfg;
  LatentTriple lat = encode(model.codec, cfg.codec, cfg.env, window);

  ShieldDecision d;
  d.mode = to_string(opts.mode);
  d.budget = budget;
  d.policy_snapshot = snapshot_tag;
  if (cfg.env.discrete()) {
    d.origin = "enumerated-discrete";
    d.rho = policy_probs(model.policy, cfg.policy, cfg.env, cfg.codec.d_m, lat.z_p);
    for (int a = 0; a < cfg.env.n_actions(); ++a)
      d.candidates.push_back({static_cast<float>(a)});
  } else {
    if (opts.n_samples < 1)
      throw ContractError("select_action: need at least one candidate sample");
    d.origin = "sampled-continuous";
    for (int i = 0; i < opts.n_samples; ++i) {
      d.candidates.push_back(
          policy_sample(model.policy, cfg.policy, cfg.env, cfg.codec.d_m, lat.z_p, rng));
      d.rho.push_back(1.0);
    }
  }

  d.q_plus.resize(d.candidates.size());
  for (size_t i = 0; i < d.candidates.size(); ++i) {
    double q = q_plus(model.qc, cfg.critic, cfg.codec.d_m, cfg.env, lat.z_w,
                      d.candidates[i]);
    if (!std::isfinite(q))
      throw ModelHealthError("select_action: non-finite critic output; refusing to act");
    d.q_plus[i] = q;
  }

  BarrierValues bar = barriers(d.q_plus, budget);
  d.b_q = bar.b_q;
  d.b_v = bar.b_v;

  switch (opts.mode) {
    case ShieldMode::Off: {
      // Bypass: the base weights themselves, renormalized.
      double total = 0.0;
      for (double r : d.rho) total += r;
      if (total <= 0.0) throw ContractError("select_action: zero base mass");
      d.probs.resize(d.rho.size());
      for (size_t i = 0; i < d.rho.size(); ++i) d.probs[i] = d.rho[i] / total;
      break;
    }
    case ShieldMode::Soft:
      d.probs = soft_shield(d.rho, d.b_q, opts.temperature);
      break;
    case ShieldMode::Hard: {
      HardShieldResult h = hard_shield(d.rho, d.b_q, d.q_plus);
      d.probs = std::move(h.probs);
      d.fallback = h.fallback;
      d.tie_set = std::move(h.tie_set);
      break;
    }
  }
  d.chosen = rng.categorical(d.probs);
  return d;
}

// Policy callback for run_context: shielded action selection with decision
// logging. The per-episode budget argument comes from the rollout engine.
inline PolicyFn make_shield_agent(const Model& model, const ShieldOptions& opts,
                                  Rng& rng, const std::string& snapshot_tag = "") {
  return [&model, opts, &rng, snapshot_tag](
             const std::vector<Transition>& history, const std::vector<float>& obs,
             double budget, int /*k*/, int /*t*/) -> ActionChoice {
    ContextWindow w = make_window(model.cfg.env, model.cfg.codec.window, history, obs);
    ShieldDecision d = select_action(model, w, budget, opts, rng, snapshot_tag);
    ActionChoice choice;
    choice.action = d.candidates[d.chosen];
    choice.decision = std::move(d);
    return choice;
  };
}

}  // namespace qb
