// Reward and cost critic ensembles with Polyak-averaged target copies.
// Reward heads score (shared latent, action); cost heads score
// (world-projected latent, action). The deployed barrier uses the
// pessimistic aggregate: the maximum over the online cost heads.
#pragma once

#include <string>
#include <vector>

#include "qbarrier/cmdp.hpp"
#include "qbarrier/codec.hpp"
#include "qbarrier/gradnet.hpp"
#include "qbarrier/policy.hpp"

namespace qb {

struct CriticConfig {
  int m_heads = 4;
  int k_c = 1;           // target-policy action samples per transition
  double gamma_r = 0.99; // reward discount; the cost critic is undiscounted
  int hidden = 64;
  // Alternative target: max over two randomly selected target heads instead
  // of the ensemble mean.
  bool target_two_head_max = false;
};

inline std::string head_prefix(int i) { return "h" + std::to_string(i); }

inline MlpSpec critic_spec(int latent_dim, const EnvSpec& env, int hidden) {
  return MlpSpec{{gated_input_dim(latent_dim, env), hidden, 1}, false};
}

inline void critics_init(ParamStore& ps, const CriticConfig& cfg, int latent_dim,
                         const EnvSpec& env, Rng& rng) {
  if (cfg.m_heads < 2) throw ConfigError("critics_init: need at least two heads");
  for (int i = 0; i < cfg.m_heads; ++i)
    mlp_init(ps, head_prefix(i), critic_spec(latent_dim, env, cfg.hidden), rng);
}

inline double critic_value(const ParamStore& ps, int head, int latent_dim,
                           const EnvSpec& env, int hidden,
                           const std::vector<double>& latent,
                           const std::vector<float>& action) {
  return mlp_apply(ps, head_prefix(head), critic_spec(latent_dim, env, hidden),
                   gated_input(env, latent, action))[0];
}

// Pessimistic aggregate: max over the online cost heads.
inline double q_plus(const ParamStore& ps, const CriticConfig& cfg, int latent_dim,
                     const EnvSpec& env, const std::vector<double>& z_w,
                     const std::vector<float>& action) {
  double best = critic_value(ps, 0, latent_dim, env, cfg.hidden, z_w, action);
  for (int i = 1; i < cfg.m_heads; ++i)
    best = std::max(best, critic_value(ps, i, latent_dim, env, cfg.hidden, z_w, action));
  return best;
}

inline double q_mean(const ParamStore& ps, const CriticConfig& cfg, int latent_dim,
                     const EnvSpec& env, const std::vector<double>& z_w,
                     const std::vector<float>& action) {
  double acc = 0.0;
  for (int i = 0; i < cfg.m_heads; ++i)
    acc += critic_value(ps, i, latent_dim, env, cfg.hidden, z_w, action);
  return acc / cfg.m_heads;
}

struct BellmanTarget {
  double y_c = 0.0;
  double y_r = 0.0;
  std::vector<float> target_action;  // one sample kept for inspection
};

struct TargetBatchItem {
  std::vector<double> z_next;    // shared latent at t+1
  std::vector<double> z_w_next;  // world latent at t+1
  std::vector<double> z_p_next;  // policy latent at t+1
  double reward = 0.0;
  double cost = 0.0;
  bool done = false;
  bool d_ctx = false;
};

// Detached Bellman targets from the target networks and the target policy.
// The cost target bootstraps undiscounted and is masked at context episode
// boundaries; the reward target uses gamma_r and the done mask.
inline std::vector<BellmanTarget> make_targets(
    const ParamStore& qc_target, const ParamStore& qr_target,
    const ParamStore& policy_target, const CriticConfig& cfg,
    const PolicyConfig& pi_cfg, const EnvSpec& env, int d_z, int d_m,
    const std::vector<TargetBatchItem>& batch, Rng& rng) {
  if (cfg.k_c < 1) throw ContractError("make_targets: k_c must be >= 1");
  std::vector<BellmanTarget> out;
  out.reserve(batch.size());
  for (const auto& item : batch) {
    double v_c = 0.0, v_r = 0.0;
    std::vector<float> kept_action;
    for (int l = 0; l < cfg.k_c; ++l) {
      std::vector<float> a =
          policy_sample(policy_target, pi_cfg, env, d_m, item.z_p_next, rng);
      if (l == 0) kept_action = a;
      if (cfg.target_two_head_max) {
        int i = rng.uniform_int(cfg.m_heads);
        int j = rng.uniform_int(cfg.m_heads);
        double qi = critic_value(qc_target, i, d_m, env, cfg.hidden, item.z_w_next, a);
        double qj = critic_value(qc_target, j, d_m, env, cfg.hidden, item.z_w_next, a);
        v_c += std::max(qi, qj);
      } else {
        double acc = 0.0;
        for (int j = 0; j < cfg.m_heads; ++j)
          acc += critic_value(qc_target, j, d_m, env, cfg.hidden, item.z_w_next, a);
        v_c += acc / cfg.m_heads;
      }
      double acc_r = 0.0;
      for (int j = 0; j < cfg.m_heads; ++j)
        acc_r += critic_value(qr_target, j, d_z, env, cfg.hidden, item.z_next, a);
      v_r += acc_r / cfg.m_heads;
    }
    v_c /= cfg.k_c;
    v_r /= cfg.k_c;
    BellmanTarget t;
    t.y_c = item.cost + (item.d_ctx ? 0.0 : 1.0) * v_c;
    t.y_r = item.reward + cfg.gamma_r * (item.done ? 0.0 : 1.0) * v_r;
    t.target_action = std::move(kept_action);
    out.push_back(std::move(t));
  }
  return out;
}

// Tape paths.
inline Var critic_value_var(Tape& tape, const ParamStore& ps, int head, int latent_dim,
                            const EnvSpec& env, int hidden, Var latent,
                            const std::vector<float>& action, bool frozen = false) {
  Var x = gated_input_var(tape, env, latent, action);
  return mlp_forward(tape, ps, head_prefix(head), critic_spec(latent_dim, env, hidden),
                     x, frozen);
}

// Variant with the action itself a tape node (continuous reparameterization).
inline Var critic_value_var(Tape& tape, const ParamStore& ps, int head, int latent_dim,
                            const EnvSpec& env, int hidden, Var latent, Var action,
                            bool frozen = false) {
  Var x = gated_input_var(tape, env, latent, action);
  return mlp_forward(tape, ps, head_prefix(head), critic_spec(latent_dim, env, hidden),
                     x, frozen);
}

template <typename ActionT>
inline Var q_plus_var(Tape& tape, const ParamStore& ps, const CriticConfig& cfg,
                      int latent_dim, const EnvSpec& env, Var z_w,
                      const ActionT& action, bool frozen = false) {
  Var stack = critic_value_var(tape, ps, 0, latent_dim, env, cfg.hidden, z_w, action,
                               frozen);
  for (int i = 1; i < cfg.m_heads; ++i)
    stack = tape.concat(stack, critic_value_var(tape, ps, i, latent_dim, env,
                                                cfg.hidden, z_w, action, frozen));
  return tape.max_(stack);
}

template <typename ActionT>
inline Var q_mean_var(Tape& tape, const ParamStore& ps, const CriticConfig& cfg,
                      int latent_dim, const EnvSpec& env, Var latent,
                      const ActionT& action, bool frozen = false) {
  Var acc = critic_value_var(tape, ps, 0, latent_dim, env, cfg.hidden, latent, action,
                             frozen);
  for (int i = 1; i < cfg.m_heads; ++i)
    acc = tape.add(acc, critic_value_var(tape, ps, i, latent_dim, env, cfg.hidden,
                                         latent, action, frozen));
  return tape.scale(acc, 1.0 / cfg.m_heads);
}

// Per-transition critic loss:
//   (1/M) sum_i [ (Qc_i(z_w, a) - Y^C)^2 + (Qr_i(z, a) - Y^R)^2 ].
inline Var critic_loss_term(Tape& tape, const ParamStore& qc, const ParamStore& qr,
                            const CriticConfig& cfg, const EnvSpec& env, int d_z,
                            int d_m, Var z, Var z_w, const std::vector<float>& action,
                            const BellmanTarget& target) {
  Var acc{-1};
  for (int i = 0; i < cfg.m_heads; ++i) {
    Var qc_i = critic_value_var(tape, qc, i, d_m, env, cfg.hidden, z_w, action);
    Var dc = tape.add_const(qc_i, -target.y_c);
    Var qr_i = critic_value_var(tape, qr, i, d_z, env, cfg.hidden, z, action);
    Var dr = tape.add_const(qr_i, -target.y_r);
    Var term = tape.add(tape.mul(dc, dc), tape.mul(dr, dr));
    acc = (i == 0) ? term : tape.add(acc, term);
  }
  return tape.scale(acc, 1.0 / cfg.m_heads);
}

}  // namespace qb
