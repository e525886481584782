// History encoder and projection heads. The encoder flattens a fixed-length
// window of cross-episode transitions together with the current observation
// into a shared latent Z; two heads project Z into a world view (latent
// dynamics and cost estimation) and a policy view (action proposals).
#pragma once

#include <span>
#include <string>
#include <vector>

#include "qbarrier/cmdp.hpp"
#include "qbarrier/errors.hpp"
#include "qbarrier/gradnet.hpp"

namespace qb {

struct CodecConfig {
  int window = 20;
  int d_z = 32;
  int d_m = 16;
  int hidden = 64;

  int input_dim(const EnvSpec& env) const {
    return window * env.emb_dim() + env.state_dim();
  }
  // Two hidden layers: matching the current state against window slots needs
  // compositional depth that one tanh layer cannot express.
  MlpSpec encoder_spec(const EnvSpec& env) const {
    return MlpSpec{{input_dim(env), hidden, hidden, d_z}, /*tanh_out=*/true};
  }
  MlpSpec head_spec() const { return MlpSpec{{d_z, d_m}, /*tanh_out=*/true}; }
};

// Fixed-length slice of history. Slots are ordered oldest to newest and
// right-aligned; missing entries are zero-padded with mask 0.
struct ContextWindow {
  int window = 0;
  int emb_dim = 0;
  std::vector<double> slots;           // window * emb_dim values
  std::vector<uint8_t> mask;           // 1 for real transitions
  std::vector<double> current_state;
};

// One-hot for discrete actions, raw value for continuous.
inline std::vector<double> action_embedding(const EnvSpec& env,
                                            const std::vector<float>& action) {
  if (env.discrete()) {
    std::vector<double> e(env.n_actions(), 0.0);
    int a = static_cast<int>(action.at(0));
    if (a < 0 || a >= env.n_actions())
      throw ContractError("action_embedding: index out of range");
    e[a] = 1.0;
    return e;
  }
  return {static_cast<double>(action.at(0))};
}

// Action-conditioned network inputs carry an explicit bilinear interaction:
// the latent, the action embedding, and the latent gated by each action
// component. The gating makes per-action differences a first-layer linear
// read instead of a product the net would have to synthesize.
inline int gated_input_dim(int latent_dim, const EnvSpec& env) {
  int k = env.action_emb_dim();
  return latent_dim + k + latent_dim * k;
}

inline std::vector<double> gated_input(const EnvSpec& env,
                                       const std::vector<double>& latent,
                                       const std::vector<float>& action) {
  auto ae = action_embedding(env, action);
  std::vector<double> x;
  x.reserve(gated_input_dim(static_cast<int>(latent.size()), env));
  x.insert(x.end(), latent.begin(), latent.end());
  x.insert(x.end(), ae.begin(), ae.end());
  for (double a : ae)
    for (double z : latent) x.push_back(a * z);
  return x;
}

// Tape variant with a constant action.
inline Var gated_input_var(Tape& tape, const EnvSpec& env, Var latent,
                           const std::vector<float>& action) {
  auto ae = action_embedding(env, action);
  size_t d = tape.value(latent).size();
  Var x = tape.concat(latent, tape.input(ae));
  for (double a : ae) {
    Var block = (a == 0.0) ? tape.input(std::vector<double>(d, 0.0))
                           : tape.scale(latent, a);
    x = tape.concat(x, block);
  }
  return x;
}

// Tape variant with the action itself a scalar node (continuous actions).
inline Var gated_input_var(Tape& tape, const EnvSpec& env, Var latent, Var action) {
  if (env.discrete())
    throw ContractError("gated_input_var: action nodes are for continuous spaces");
  Var x = tape.concat(latent, action);
  return tape.concat(x, tape.scale_vec(latent, action));
}

inline std::vector<double> embed_transition(const EnvSpec& env, const Transition& tr) {
  std::vector<double> e;
  e.reserve(env.emb_dim());
  for (float v : tr.state) e.push_back(v);
  auto ae = action_embedding(env, tr.action);
  e.insert(e.end(), ae.begin(), ae.end());
  e.push_back(tr.reward);
  e.push_back(tr.cost);
  e.push_back(tr.d_ctx ? 1.0 : 0.0);
  return e;
}

inline ContextWindow make_window(const EnvSpec& env, int window,
                                 std::span<const Transition> history,
                                 const std::vector<float>& current_state) {
  ContextWindow w;
  w.window = window;
  w.emb_dim = env.emb_dim();
  w.slots.assign(static_cast<size_t>(window) * w.emb_dim, 0.0);
  w.mask.assign(window, 0);
  size_t n = history.size();
  size_t take = std::min<size_t>(window, n);
  for (size_t i = 0; i < take; ++i) {
    const Transition& tr = history[n - take + i];
    size_t slot = window - take + i;
    auto e = embed_transition(env, tr);
    std::copy(e.begin(), e.end(), w.slots.begin() + slot * w.emb_dim);
    w.mask[slot] = 1;
  }
  w.current_state.assign(current_state.begin(), current_state.end());
  return w;
}

// Flattened encoder input. Masked slots are forced to zero so that whatever
// sits in a padded slot cannot influence the latent.
inline std::vector<double> window_input(const ContextWindow& w) {
  std::vector<double> x(static_cast<size_t>(w.window) * w.emb_dim + w.current_state.size());
  for (int s = 0; s < w.window; ++s) {
    if (!w.mask[s]) continue;
    for (int j = 0; j < w.emb_dim; ++j)
      x[s * w.emb_dim + j] = w.slots[s * w.emb_dim + j];
  }
  std::copy(w.current_state.begin(), w.current_state.end(),
            x.begin() + static_cast<size_t>(w.window) * w.emb_dim);
  return x;
}

struct LatentTriple {
  std::vector<double> z;    // shared latent
  std::vector<double> z_w;  // world view
  std::vector<double> z_p;  // policy view
};

inline void codec_init(ParamStore& ps, const CodecConfig& cfg, const EnvSpec& env,
                       Rng& rng) {
  mlp_init(ps, "enc", cfg.encoder_spec(env), rng);
  mlp_init(ps, "gw", cfg.head_spec(), rng);
  mlp_init(ps, "gp", cfg.head_spec(), rng);
}

// Tape-free paths (frozen inference).
inline std::vector<double> encode_z(const ParamStore& ps, const CodecConfig& cfg,
                                    const EnvSpec& env, const ContextWindow& w) {
  return mlp_apply(ps, "enc", cfg.encoder_spec(env), window_input(w));
}

inline std::vector<double> project_w(const ParamStore& ps, const CodecConfig& cfg,
                                     const std::vector<double>& z) {
  return mlp_apply(ps, "gw", cfg.head_spec(), z);
}

inline std::vector<double> project_p(const ParamStore& ps, const CodecConfig& cfg,
                                     const std::vector<double>& z) {
  return mlp_apply(ps, "gp", cfg.head_spec(), z);
}

inline LatentTriple encode(const ParamStore& ps, const CodecConfig& cfg,
                           const EnvSpec& env, const ContextWindow& w) {
  LatentTriple out;
  out.z = encode_z(ps, cfg, env, w);
  for (double v : out.z)
    if (!std::isfinite(v)) throw ModelHealthError("encode: non-finite latent");
  out.z_w = project_w(ps, cfg, out.z);
  out.z_p = project_p(ps, cfg, out.z);
  return out;
}

// Tape paths. encode_z_var feeds the window through the encoder with live
// gradients (or frozen parameters); the head projections take any latent Var.
inline Var encode_z_var(Tape& tape, const ParamStore& ps, const CodecConfig& cfg,
                        const EnvSpec& env, const ContextWindow& w,
                        bool frozen = false) {
  Var x = tape.input(window_input(w));
  return mlp_forward(tape, ps, "enc", cfg.encoder_spec(env), x, frozen);
}

inline Var project_w_var(Tape& tape, const ParamStore& ps, const CodecConfig& cfg,
                         Var z, bool frozen = false) {
  return mlp_forward(tape, ps, "gw", cfg.head_spec(), z, frozen);
}

inline Var project_p_var(Tape& tape, const ParamStore& ps, const CodecConfig& cfg,
                         Var z, bool frozen = false) {
  return mlp_forward(tape, ps, "gp", cfg.head_spec(), z, frozen);
}

struct EncodeVars {
  Var z, z_w, z_p;
};

// Live encode: gradients reach the encoder and both heads.
inline EncodeVars encode_var(Tape& tape, const ParamStore& ps, const CodecConfig& cfg,
                             const EnvSpec& env, const ContextWindow& w) {
  EncodeVars out;
  out.z = encode_z_var(tape, ps, cfg, env, w);
  out.z_w = project_w_var(tape, ps, cfg, out.z);
  out.z_p = project_p_var(tape, ps, cfg, out.z);
  return out;
}

// Detached encode: the shared latent is wrapped in a stop-gradient before both
// projections, so the encoder receives exactly zero gradient through this path.
inline EncodeVars encode_detached_var(Tape& tape, const ParamStore& ps,
                                      const CodecConfig& cfg, const EnvSpec& env,
                                      const ContextWindow& w) {
  EncodeVars out;
  Var z_live = encode_z_var(tape, ps, cfg, env, w);
  out.z = tape.stop_grad(z_live);
  out.z_w = project_w_var(tape, ps, cfg, out.z);
  out.z_p = project_p_var(tape, ps, cfg, out.z);
  return out;
}

}  // namespace qb
