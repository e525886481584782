// Base policy heads over the policy-projected latent: a categorical head for
// discrete action spaces and a diagonal Gaussian head for the continuous toy.
#pragma once

#include <cmath>
#include <vector>

#include "qbarrier/cmdp.hpp"
#include "qbarrier/gradnet.hpp"

namespace qb {

struct PolicyConfig {
  int hidden = 64;

  // Discrete: logits over actions. Continuous: [mean, raw log-std].
  MlpSpec spec(const EnvSpec& env, int d_m) const {
    int out = env.discrete() ? env.n_actions() : 2;
    return MlpSpec{{d_m, hidden, out}, /*tanh_out=*/false};
  }
};

constexpr double kPolicyLogStdLo = -5.0;
constexpr double kPolicyLogStdHi = 2.0;

inline void policy_init(ParamStore& ps, const PolicyConfig& cfg, const EnvSpec& env,
                        int d_m, Rng& rng) {
  mlp_init(ps, "pi", cfg.spec(env, d_m), rng);
}

// Action probabilities over the discrete action space.
inline std::vector<double> policy_probs(const ParamStore& ps, const PolicyConfig& cfg,
                                        const EnvSpec& env, int d_m,
                                        const std::vector<double>& z_p) {
  std::vector<double> logits = mlp_apply(ps, "pi", cfg.spec(env, d_m), z_p);
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  double z = 0.0;
  for (auto& v : logits) {
    v = std::exp(v - mx);
    z += v;
  }
  for (auto& v : logits) v /= z;
  return logits;
}

struct GaussianHead {
  double mean = 0.0;
  double log_std = 0.0;
  double stddev() const { return std::exp(log_std); }
};

inline GaussianHead policy_gaussian(const ParamStore& ps, const PolicyConfig& cfg,
                                    const EnvSpec& env, int d_m,
                                    const std::vector<double>& z_p) {
  std::vector<double> out = mlp_apply(ps, "pi", cfg.spec(env, d_m), z_p);
  GaussianHead g;
  g.mean = out[0];
  g.log_std = std::min(std::max(out[1], kPolicyLogStdLo), kPolicyLogStdHi);
  return g;
}

// One action sampled from the base policy. Continuous samples are clipped to
// the action box.
inline std::vector<float> policy_sample(const ParamStore& ps, const PolicyConfig& cfg,
                                        const EnvSpec& env, int d_m,
                                        const std::vector<double>& z_p, Rng& rng) {
  if (env.discrete()) {
    auto probs = policy_probs(ps, cfg, env, d_m, z_p);
    return {static_cast<float>(rng.categorical(probs))};
  }
  GaussianHead g = policy_gaussian(ps, cfg, env, d_m, z_p);
  double a = rng.normal(g.mean, g.stddev());
  a = std::min(std::max(a, -1.0), 1.0);
  return {static_cast<float>(a)};
}

// Tape paths.
inline Var policy_logits_var(Tape& tape, const ParamStore& ps, const PolicyConfig& cfg,
                             const EnvSpec& env, int d_m, Var z_p,
                             bool frozen = false) {
  return mlp_forward(tape, ps, "pi", cfg.spec(env, d_m), z_p, frozen);
}

struct GaussianVars {
  Var mean;     // scalar
  Var log_std;  // scalar, clamped
};

inline GaussianVars policy_gaussian_var(Tape& tape, const ParamStore& ps,
                                        const PolicyConfig& cfg, const EnvSpec& env,
                                        int d_m, Var z_p, bool frozen = false) {
  Var out = mlp_forward(tape, ps, "pi", cfg.spec(env, d_m), z_p, frozen);
  GaussianVars g;
  g.mean = tape.pick(out, 0);
  g.log_std = tape.clamp_(tape.pick(out, 1), kPolicyLogStdLo, kPolicyLogStdHi);
  return g;
}

}  // namespace qb
