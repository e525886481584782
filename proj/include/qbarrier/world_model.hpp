// One-step latent world model on the world-projected latent: a shared trunk
// over (z_w, action) with a diagonal-Gaussian next-latent head and scalar
// reward/cost heads, plus the structural alignment losses that coordinate the
// two projection heads through stop-gradients.
#pragma once

#include <cmath>
#include <vector>

#include "qbarrier/cmdp.hpp"
#include "qbarrier/codec.hpp"
#include "qbarrier/gradnet.hpp"

namespace qb {

constexpr double kStdLo = 1e-3;
constexpr double kStdHi = 10.0;

struct WorldModelConfig {
  int d_m = 16;
  int hidden = 64;

  // Gated (latent, action) input, as in the critics.
  int input_dim(const EnvSpec& env) const {
    int k = env.action_emb_dim();
    return d_m + k + d_m * k;
  }
  MlpSpec trunk_spec(const EnvSpec& env) const {
    return MlpSpec{{input_dim(env), hidden}, /*tanh_out=*/true};
  }
  MlpSpec mean_spec() const { return MlpSpec{{hidden, d_m}, false}; }
  MlpSpec lstd_spec() const { return MlpSpec{{hidden, d_m}, false}; }
  MlpSpec scalar_spec() const { return MlpSpec{{hidden, 1}, false}; }
};

inline void world_model_init(ParamStore& ps, const WorldModelConfig& cfg,
                             const EnvSpec& env, Rng& rng) {
  mlp_init(ps, "trunk", cfg.trunk_spec(env), rng);
  mlp_init(ps, "mean", cfg.mean_spec(), rng);
  mlp_init(ps, "lstd", cfg.lstd_spec(), rng);
  mlp_init(ps, "rew", cfg.scalar_spec(), rng);
  mlp_init(ps, "cost", cfg.scalar_spec(), rng);
}

struct LatentPrediction {
  std::vector<double> mean;
  std::vector<double> log_std;  // clamped to [log kStdLo, log kStdHi]
  double reward = 0.0;
  double cost = 0.0;
};

inline LatentPrediction wm_predict(const ParamStore& ps, const WorldModelConfig& cfg,
                                   const EnvSpec& env, const std::vector<double>& z_w,
                                   const std::vector<float>& action) {
  for (double v : z_w)
    if (!std::isfinite(v)) throw ModelHealthError("wm_predict: non-finite latent");
  auto h = mlp_apply(ps, "trunk", cfg.trunk_spec(env), gated_input(env, z_w, action));
  LatentPrediction out;
  out.mean = mlp_apply(ps, "mean", cfg.mean_spec(), h);
  out.log_std = mlp_apply(ps, "lstd", cfg.lstd_spec(), h);
  for (auto& v : out.log_std)
    v = std::min(std::max(v, std::log(kStdLo)), std::log(kStdHi));
  out.reward = mlp_apply(ps, "rew", cfg.scalar_spec(), h)[0];
  out.cost = mlp_apply(ps, "cost", cfg.scalar_spec(), h)[0];
  for (double v : out.mean)
    if (!std::isfinite(v)) throw ModelHealthError("wm_predict: non-finite mean");
  return out;
}

// Gaussian log-density of a target next latent under the prediction.
inline double wm_log_density(const LatentPrediction& p,
                             const std::vector<double>& target) {
  double acc = 0.0;
  for (size_t i = 0; i < p.mean.size(); ++i) {
    double u = (target[i] - p.mean[i]) * std::exp(-p.log_std[i]);
    acc -= p.log_std[i] + 0.5 * u * u + 0.5 * std::log(2.0 * M_PI);
  }
  return acc;
}

// One sample of the next latent.
inline std::vector<double> wm_sample(const LatentPrediction& p, Rng& rng) {
  std::vector<double> out(p.mean.size());
  for (size_t i = 0; i < out.size(); ++i)
    out[i] = p.mean[i] + std::exp(p.log_std[i]) * rng.normal();
  return out;
}

struct WmVars {
  Var mean;
  Var log_std;
  Var reward;  // scalar
  Var cost;    // scalar
};

inline WmVars wm_predict_var(Tape& tape, const ParamStore& ps,
                             const WorldModelConfig& cfg, const EnvSpec& env,
                             Var z_w, const std::vector<float>& action,
                             bool frozen = false) {
  Var x = gated_input_var(tape, env, z_w, action);
  Var h = mlp_forward(tape, ps, "trunk", cfg.trunk_spec(env), x, frozen);
  WmVars out;
  out.mean = mlp_forward(tape, ps, "mean", cfg.mean_spec(), h, frozen);
  out.log_std = tape.clamp_(mlp_forward(tape, ps, "lstd", cfg.lstd_spec(), h, frozen),
                            std::log(kStdLo), std::log(kStdHi));
  out.reward = mlp_forward(tape, ps, "rew", cfg.scalar_spec(), h, frozen);
  out.cost = mlp_forward(tape, ps, "cost", cfg.scalar_spec(), h, frozen);
  return out;
}

// Per-transition world-model loss:
//   -log p(z_w' | z_w, a) + (R_hat - R)^2 + (C_hat - C)^2.
// The next-latent target enters as a constant.
inline Var wm_loss_term(Tape& tape, const ParamStore& ps, const WorldModelConfig& cfg,
                        const EnvSpec& env, Var z_w, const std::vector<float>& action,
                        const std::vector<double>& z_w_next, double reward,
                        double cost) {
  WmVars p = wm_predict_var(tape, ps, cfg, env, z_w, action);
  Var nll = tape.gaussian_nll(p.mean, p.log_std, z_w_next);
  Var dr = tape.add_const(p.reward, -reward);
  Var dc = tape.add_const(p.cost, -cost);
  return tape.add(nll, tape.add(tape.mul(dr, dr), tape.mul(dc, dc)));
}

// As wm_loss_term but with a live next-latent target Var (used when the
// dynamics target is configured to carry gradients back into the encoder).
inline Var wm_loss_term_live(Tape& tape, const ParamStore& ps,
                             const WorldModelConfig& cfg, const EnvSpec& env, Var z_w,
                             const std::vector<float>& action, Var z_w_next,
                             double reward, double cost) {
  WmVars p = wm_predict_var(tape, ps, cfg, env, z_w, action);
  Var u = tape.mul(tape.sub(z_w_next, p.mean), tape.exp_(tape.scale(p.log_std, -1.0)));
  Var nll = tape.add_const(
      tape.add(tape.sum(p.log_std), tape.scale(tape.dot(u, u), 0.5)),
      0.5 * std::log(2.0 * M_PI) * cfg.d_m);
  Var dr = tape.add_const(p.reward, -reward);
  Var dc = tape.add_const(p.cost, -cost);
  return tape.add(nll, tape.add(tape.mul(dr, dr), tape.mul(dc, dc)));
}

// || g_p(sg(Z)) - sg(g_w(Z)) ||^2 — gradients reach only the policy head.
inline Var distill_loss_term(Tape& tape, const ParamStore& codec,
                             const CodecConfig& cfg, Var z) {
  Var p = project_p_var(tape, codec, cfg, tape.stop_grad(z));
  Var w = tape.stop_grad(project_w_var(tape, codec, cfg, z));
  Var d = tape.sub(p, w);
  return tape.dot(d, d);
}

// || (g_p(sg(Z')) - g_p(sg(Z))) - sg(g_w(Z') - g_w(Z)) ||^2.
inline Var conjugacy_loss_term(Tape& tape, const ParamStore& codec,
                               const CodecConfig& cfg, Var z_t, Var z_t1) {
  Var dp = tape.sub(project_p_var(tape, codec, cfg, tape.stop_grad(z_t1)),
                    project_p_var(tape, codec, cfg, tape.stop_grad(z_t)));
  Var dw = tape.stop_grad(tape.sub(project_w_var(tape, codec, cfg, z_t1),
                                   project_w_var(tape, codec, cfg, z_t)));
  Var d = tape.sub(dp, dw);
  return tape.dot(d, d);
}

}  // namespace qb
