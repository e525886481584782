// Bundle of every learned component: encoder + projections, world model, base
// policy, reward/cost critic ensembles and their target copies.
#pragma once

#include <map>
#include <string>
#include <vector>

#include "qbarrier/checkpoint.hpp"
#include "qbarrier/cmdp.hpp"
#include "qbarrier/codec.hpp"
#include "qbarrier/critics.hpp"
#include "qbarrier/gradnet.hpp"
#include "qbarrier/policy.hpp"
#include "qbarrier/world_model.hpp"

namespace qb {

struct ModelConfig {
  EnvSpec env;
  CodecConfig codec;
  WorldModelConfig wm;
  PolicyConfig policy;
  CriticConfig critic;

  void sync_dims() {
    wm.d_m = codec.d_m;
    wm.hidden = codec.hidden;
    policy.hidden = codec.hidden;
    critic.hidden = codec.hidden;
  }
};

struct Model {
  ModelConfig cfg;
  ParamStore codec{"codec"};
  ParamStore wm{"wm"};
  ParamStore policy{"policy"};
  ParamStore policy_tgt{"policy_tgt"};
  ParamStore qc{"qc"};
  ParamStore qc_tgt{"qc_tgt"};
  ParamStore qr{"qr"};
  ParamStore qr_tgt{"qr_tgt"};

  void init(uint64_t seed) {
    cfg.sync_dims();
    Rng rng = Rng::derive(seed, /*stream=*/0xC0DE);
    codec_init(codec, cfg.codec, cfg.env, rng);
    world_model_init(wm, cfg.wm, cfg.env, rng);
    policy_init(policy, cfg.policy, cfg.env, cfg.codec.d_m, rng);
    critics_init(qc, cfg.critic, cfg.codec.d_m, cfg.env, rng);
    critics_init(qr, cfg.critic, cfg.codec.d_z, cfg.env, rng);
    policy_tgt = clone_as(policy, "policy_tgt");
    qc_tgt = clone_as(qc, "qc_tgt");
    qr_tgt = clone_as(qr, "qr_tgt");
  }

  std::vector<ParamStore*> trainable_stores() {
    return {&codec, &wm, &policy, &qc, &qr};
  }
  std::vector<ParamStore*> all_stores() {
    return {&codec, &wm, &policy, &policy_tgt, &qc, &qc_tgt, &qr, &qr_tgt};
  }
  std::vector<const ParamStore*> all_stores() const {
    return {&codec, &wm, &policy, &policy_tgt, &qc, &qc_tgt, &qr, &qr_tgt};
  }

  std::map<std::string, ParamStore*> store_map() {
    std::map<std::string, ParamStore*> m;
    for (ParamStore* ps : trainable_stores()) m[ps->name()] = ps;
    return m;
  }

  void polyak_targets(double tau) {
    polyak_update(policy_tgt, policy, tau);
    polyak_update(qc_tgt, qc, tau);
    polyak_update(qr_tgt, qr, tau);
  }

  // Digest of all parameter content (used for the frozen-parameter contract
  // and decision provenance tags).
  std::string param_digest() const { return params_digest(all_stores()); }

  void write_into(Checkpoint& ck) const {
    for (const ParamStore* ps : all_stores()) ck.stores[ps->name()] = *ps;
  }

  void read_from(const Checkpoint& ck) {
    for (ParamStore* ps : all_stores()) {
      auto it = ck.stores.find(ps->name());
      if (it == ck.stores.end())
        throw ConfigError("checkpoint is missing store " + ps->name());
      *ps = it->second;
    }
  }

 private:
  static ParamStore clone_as(const ParamStore& src, const std::string& name) {
    ParamStore out = src;
    out.set_name(name);
    return out;
  }
};

}  // namespace qb
