// Training orchestration: replay buffer over logged contexts, batch assembly
// of temporally adjacent window pairs, the actor/critic/world-model losses
// with their fixed weights, optimizer steps, target updates and the dual
// ascent on the cost multiplier.
#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "qbarrier/checkpoint.hpp"
#include "qbarrier/cmdp.hpp"
#include "qbarrier/codec.hpp"
#include "qbarrier/critics.hpp"
#include "qbarrier/gradnet.hpp"
#include "qbarrier/model.hpp"
#include "qbarrier/policy.hpp"
#include "qbarrier/shield.hpp"
#include "qbarrier/world_model.hpp"

namespace qb {

struct TrainConfig {
  int epochs = 30;
  int steps_per_epoch = 300;      // environment steps collected per epoch
  int batches_per_epoch = 100;
  int batch_size = 32;
  int episodes_per_context = 5;   // K during collection
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double grad_clip = 1.0;
  double tau = 0.005;
  int buffer_capacity = 20000;
  // Fixed loss weights.
  double lambda_critic = 10.0;
  double lambda_wm = 1.0;
  double lambda_distill = 0.1;
  double lambda_conj = 0.1;
  double alpha_bc = 0.1;
  double awbc_clip = 20.0;
  // Dual ascent on the cost penalty.
  double lambda_lr = 0.01;
  double lambda_c_init = 0.0;
  // Collection.
  double alpha_train = -0.5;
  double budget_min = 1.0;
  double budget_max = 15.0;
  ShieldMode collect_shield = ShieldMode::Off;
  int shield_ns = 8;
  // Detach the next-latent target of the dynamics loss (default) or let its
  // gradient reach the encoder through the target path as well.
  bool wm_detach_target = true;
  // Quick evaluation pass for the training log.
  int eval_contexts = 3;
  // Where to drop a checkpoint if a non-finite loss aborts training.
  std::string emergency_path;
};

// lambda <- [lambda + lr * (avg_episode_cost - delta)]_+
inline double lagrange_update(double lambda_c, double avg_episode_cost, double delta,
                              double lr_lambda) {
  if (lr_lambda < 0.0) throw ContractError("lagrange_update: lr must be >= 0");
  return std::max(0.0, lambda_c + lr_lambda * (avg_episode_cost - delta));
}

// ---------------------------------------------------------------------------
// Replay buffer: ring of whole contexts, sampled at (context, step). Windows
// for step t and t+1 are rebuilt from the stored transition sequence, so a
// sampled pair is always temporally adjacent within one context.

class ReplayBuffer {
 public:
  explicit ReplayBuffer(int capacity) : capacity_(capacity) {}

  void add_context(std::vector<Transition> transitions) {
    if (transitions.empty()) return;
    size_ += transitions.size();
    contexts_.push_back(std::move(transitions));
    while (size_ > static_cast<size_t>(capacity_) && contexts_.size() > 1) {
      size_ -= contexts_.front().size();
      contexts_.erase(contexts_.begin());
    }
  }

  size_t size() const { return size_; }
  size_t n_contexts() const { return contexts_.size(); }

  struct Sample {
    const std::vector<Transition>* context = nullptr;
    int t = 0;
  };

  Sample sample(Rng& rng) const {
    if (contexts_.empty()) throw ContractError("ReplayBuffer: empty");
    // Weight contexts by length so transitions are sampled uniformly.
    int idx = rng.uniform_int(static_cast<int>(size_));
    for (const auto& ctx : contexts_) {
      if (idx < static_cast<int>(ctx.size()))
        return Sample{&ctx, idx};
      idx -= static_cast<int>(ctx.size());
    }
    return Sample{&contexts_.back(), static_cast<int>(contexts_.back().size()) - 1};
  }

 private:
  int capacity_;
  std::vector<std::vector<Transition>> contexts_;
  size_t size_ = 0;
};

struct LossReport {
  double l_actor = 0.0;
  double l_critic = 0.0;
  double l_wm = 0.0;
  double l_distill = 0.0;
  double l_conj = 0.0;
  double l_total = 0.0;
  double lambda_c = 0.0;
  double cost_penalty = 0.0;  // value of the Lagrangian term inside l_actor
  double grad_norm = 0.0;
};

struct EpochReport {
  std::vector<LossReport> batches;
  double collect_avg_cost = 0.0;
  double collect_avg_return = 0.0;
  double collect_avg_delta = 0.0;
  int collect_episodes = 0;
  double lambda_c = 0.0;
  double eval_return = 0.0;
  double eval_cost = 0.0;

  LossReport mean() const {
    LossReport m;
    if (batches.empty()) return m;
    for (const auto& b : batches) {
      m.l_actor += b.l_actor;
      m.l_critic += b.l_critic;
      m.l_wm += b.l_wm;
      m.l_distill += b.l_distill;
      m.l_conj += b.l_conj;
      m.l_total += b.l_total;
      m.cost_penalty += b.cost_penalty;
      m.grad_norm += b.grad_norm;
    }
    double n = static_cast<double>(batches.size());
    m.l_actor /= n; m.l_critic /= n; m.l_wm /= n; m.l_distill /= n;
    m.l_conj /= n; m.l_total /= n; m.cost_penalty /= n; m.grad_norm /= n;
    m.lambda_c = batches.back().lambda_c;
    return m;
  }
};

// One batch item, fully prepared for loss assembly.
struct BatchItem {
  ContextWindow window_t;
  ContextWindow window_t1;
  std::vector<float> action;
  double reward = 0.0;
  double cost = 0.0;
  bool done = false;
  bool d_ctx = false;
};

inline BatchItem make_batch_item(const EnvSpec& env, int window,
                                 const std::vector<Transition>& ctx, int t) {
  const Transition& tr = ctx[t];
  BatchItem item;
  item.window_t = make_window(env, window,
                              std::span<const Transition>(ctx.data(), t), tr.state);
  item.window_t1 = make_window(
      env, window, std::span<const Transition>(ctx.data(), t + 1), tr.next_state);
  item.action = tr.action;
  item.reward = tr.reward;
  item.cost = tr.cost;
  item.done = tr.done;
  item.d_ctx = tr.d_ctx;
  return item;
}

struct ActorLossParts {
  Var loss;             // improvement + alpha_bc * awbc + lambda_c * penalty
  double penalty_value = 0.0;
};

// Detached ingredients of the actor loss, computed once per batch item from
// current parameter values: per-action critic tables, the cloning weight and
// the reparameterization noise. Keeping them out of the tape pins the loss's
// differentiable surface, so gradient checks are exact.
struct ActorContext {
  std::vector<double> q_r;  // mean reward-critic value per action (discrete)
  std::vector<double> q_c;  // pessimistic cost value per action (discrete)
  double awbc_w = 1.0;      // clipped exponential advantage weight
  double eps = 0.0;         // reparameterization draw (continuous)
  std::vector<double> z_val, zw_val;  // detached critic inputs (continuous)
};

inline ActorContext prepare_actor_context(const Model& model,
                                          const std::vector<double>& z,
                                          const std::vector<double>& z_w,
                                          const std::vector<double>& z_p,
                                          const BatchItem& item, double awbc_clip,
                                          Rng& rng) {
  const ModelConfig& cfg = model.cfg;
  ActorContext ctx;
  if (cfg.env.discrete()) {
    int n = cfg.env.n_actions();
    ctx.q_r.resize(n);
    ctx.q_c.resize(n);
    for (int a = 0; a < n; ++a) {
      std::vector<float> av = {static_cast<float>(a)};
      ctx.q_r[a] = q_mean(model.qr, cfg.critic, cfg.codec.d_z, cfg.env, z, av);
      ctx.q_c[a] = q_plus(model.qc, cfg.critic, cfg.codec.d_m, cfg.env, z_w, av);
    }
    auto probs = policy_probs(model.policy, cfg.policy, cfg.env, cfg.codec.d_m, z_p);
    double baseline = 0.0;
    for (int a = 0; a < n; ++a) baseline += probs[a] * ctx.q_r[a];
    int logged = static_cast<int>(item.action.at(0));
    ctx.awbc_w = std::min(std::exp(ctx.q_r[logged] - baseline), awbc_clip);
    return ctx;
  }
  ctx.z_val = z;
  ctx.zw_val = z_w;
  ctx.eps = rng.normal();
  GaussianHead g = policy_gaussian(model.policy, cfg.policy, cfg.env, cfg.codec.d_m,
                                   z_p);
  std::vector<float> sampled = {
      static_cast<float>(g.mean + g.stddev() * ctx.eps)};
  double q_logged =
      q_mean(model.qr, cfg.critic, cfg.codec.d_z, cfg.env, z, item.action);
  double q_sampled = q_mean(model.qr, cfg.critic, cfg.codec.d_z, cfg.env, z, sampled);
  ctx.awbc_w = std::min(std::exp(q_logged - q_sampled), awbc_clip);
  return ctx;
}

// Actor loss for one batch item. For discrete actions the improvement term is
// the expected mean reward-critic value under the policy distribution; for
// continuous actions a reparameterized sample carries the critic gradient into
// the policy head. Critic parameters are frozen inside every term, and the
// latents fed to critics are detached, so this loss shapes only the policy
// path (policy head plus encoder through the policy projection).
inline ActorLossParts actor_loss_term(Tape& tape, const Model& model,
                                      const EncodeVars& enc, const ActorContext& ctx,
                                      const BatchItem& item, double lambda_c,
                                      double alpha_bc) {
  const ModelConfig& cfg = model.cfg;
  ActorLossParts out;
  if (cfg.env.discrete()) {
    Var logits = policy_logits_var(tape, model.policy, cfg.policy, cfg.env,
                                   cfg.codec.d_m, enc.z_p);
    Var logp = tape.log_softmax_(logits);
    Var probs = tape.softmax_(logits);
    Var improve = tape.scale(tape.dot(probs, tape.input(ctx.q_r)), -1.0);
    Var penalty = tape.dot(probs, tape.input(ctx.q_c));
    out.penalty_value = tape.value(penalty)[0];
    int logged = static_cast<int>(item.action.at(0));
    Var awbc = tape.scale(tape.pick(logp, logged), -ctx.awbc_w);
    out.loss = tape.add(
        improve, tape.add(tape.scale(awbc, alpha_bc), tape.scale(penalty, lambda_c)));
    return out;
  }
  GaussianVars g = policy_gaussian_var(tape, model.policy, cfg.policy, cfg.env,
                                       cfg.codec.d_m, enc.z_p);
  Var eps = tape.input({ctx.eps});
  Var a_var = tape.add(g.mean, tape.mul(tape.exp_(g.log_std), eps));
  Var z_const = tape.input(ctx.z_val);
  Var zw_const = tape.input(ctx.zw_val);
  Var q_r = q_mean_var(tape, model.qr, cfg.critic, cfg.codec.d_z, cfg.env, z_const,
                       a_var, /*frozen=*/true);
  Var improve = tape.scale(q_r, -1.0);
  Var penalty = q_plus_var(tape, model.qc, cfg.critic, cfg.codec.d_m, cfg.env,
                           zw_const, a_var, /*frozen=*/true);
  out.penalty_value = tape.value(penalty)[0];
  Var nll = tape.gaussian_nll(g.mean, g.log_std,
                              {static_cast<double>(item.action.at(0))});
  Var awbc = tape.scale(nll, ctx.awbc_w);
  out.loss = tape.add(
      improve, tape.add(tape.scale(awbc, alpha_bc), tape.scale(penalty, lambda_c)));
  return out;
}

// ---------------------------------------------------------------------------
// Trainer.

class Trainer {
 public:
  Trainer(Model& model, const TrainConfig& cfg, uint64_t seed)
      : model_(model),
        cfg_(cfg),
        seed_(seed),
        buffer_(cfg.buffer_capacity),
        adam_(cfg.lr, cfg.beta1, cfg.beta2),
        lambda_c_(cfg.lambda_c_init) {}

  double lambda_c() const { return lambda_c_; }
  void set_lambda_c(double v) { lambda_c_ = v; }
  int epoch() const { return epoch_; }
  void set_epoch(int e) { epoch_ = e; }
  Adam& adam() { return adam_; }
  ReplayBuffer& buffer() { return buffer_; }

  // One collection phase followed by update batches. Deterministic under a
  // fixed (seed, epoch index) pair.
  EpochReport train_epoch() {
    EpochReport report;
    collect(report);
    lambda_c_ = lagrange_update(lambda_c_, report.collect_avg_cost,
                                report.collect_avg_delta, cfg_.lambda_lr);
    report.lambda_c = lambda_c_;

    Rng rng = Rng::derive(seed_, 2000 + static_cast<uint64_t>(epoch_));
    for (int b = 0; b < cfg_.batches_per_epoch; ++b)
      report.batches.push_back(train_batch(rng));

    quick_eval(report);
    ++epoch_;
    return report;
  }

  LossReport train_batch(Rng& rng) {
    if (buffer_.size() == 0) throw ContractError("train_batch: empty replay buffer");
    const ModelConfig& mc = model_.cfg;
    Tape tape;
    Var total{-1}, l_actor{-1}, l_critic{-1}, l_wm{-1}, l_distill{-1}, l_conj{-1};
    double penalty_acc = 0.0;
    std::vector<BatchItem> items;
    items.reserve(cfg_.batch_size);
    for (int i = 0; i < cfg_.batch_size; ++i) {
      auto s = buffer_.sample(rng);
      items.push_back(make_batch_item(mc.env, mc.codec.window, *s.context, s.t));
    }
    // Detached next-step latents for targets (and the default dynamics target).
    std::vector<TargetBatchItem> titems;
    titems.reserve(items.size());
    for (const auto& item : items) {
      LatentTriple nxt = encode(model_.codec, mc.codec, mc.env, item.window_t1);
      TargetBatchItem ti;
      ti.z_next = std::move(nxt.z);
      ti.z_w_next = std::move(nxt.z_w);
      ti.z_p_next = std::move(nxt.z_p);
      ti.reward = item.reward;
      ti.cost = item.cost;
      ti.done = item.done;
      ti.d_ctx = item.d_ctx;
      titems.push_back(std::move(ti));
    }
    std::vector<BellmanTarget> targets =
        make_targets(model_.qc_tgt, model_.qr_tgt, model_.policy_tgt, mc.critic,
                     mc.policy, mc.env, mc.codec.d_z, mc.codec.d_m, titems, rng);

    for (size_t i = 0; i < items.size(); ++i) {
      const BatchItem& item = items[i];
      EncodeVars enc = encode_var(tape, model_.codec, mc.codec, mc.env, item.window_t);
      Var wm_term =
          cfg_.wm_detach_target
              ? wm_loss_term(tape, model_.wm, mc.wm, mc.env, enc.z_w, item.action,
                             titems[i].z_w_next, item.reward, item.cost)
              : wm_loss_term_live(
                    tape, model_.wm, mc.wm, mc.env, enc.z_w, item.action,
                    encode_z_var(tape, model_.codec, mc.codec, mc.env, item.window_t1),
                    item.reward, item.cost);
      Var critic_term =
          critic_loss_term(tape, model_.qc, model_.qr, mc.critic, mc.env, mc.codec.d_z,
                           mc.codec.d_m, enc.z, enc.z_w, item.action, targets[i]);
      Var distill_term = distill_loss_term(tape, model_.codec, mc.codec, enc.z);
      Var conj_term = conjugacy_loss_term(tape, model_.codec, mc.codec, enc.z,
                                          tape.input(titems[i].z_next));
      ActorContext actx = prepare_actor_context(model_, tape.value(enc.z),
                                                tape.value(enc.z_w),
                                                tape.value(enc.z_p), item,
                                                cfg_.awbc_clip, rng);
      ActorLossParts actor =
          actor_loss_term(tape, model_, enc, actx, item, lambda_c_, cfg_.alpha_bc);
      penalty_acc += actor.penalty_value;
      if (i == 0) {
        l_actor = actor.loss; l_critic = critic_term; l_wm = wm_term;
        l_distill = distill_term; l_conj = conj_term;
      } else {
        l_actor = tape.add(l_actor, actor.loss);
        l_critic = tape.add(l_critic, critic_term);
        l_wm = tape.add(l_wm, wm_term);
        l_distill = tape.add(l_distill, distill_term);
        l_conj = tape.add(l_conj, conj_term);
      }
    }
    double inv_b = 1.0 / static_cast<double>(items.size());
    l_actor = tape.scale(l_actor, inv_b);
    l_critic = tape.scale(l_critic, inv_b);
    l_wm = tape.scale(l_wm, inv_b);
    l_distill = tape.scale(l_distill, inv_b);
    l_conj = tape.scale(l_conj, inv_b);
    total = tape.add(
        l_actor,
        tape.add(tape.scale(l_critic, cfg_.lambda_critic),
                 tape.add(tape.scale(l_wm, cfg_.lambda_wm),
                          tape.add(tape.scale(l_distill, cfg_.lambda_distill),
                                   tape.scale(l_conj, cfg_.lambda_conj)))));

    LossReport rep;
    rep.l_actor = tape.value(l_actor)[0];
    rep.l_critic = tape.value(l_critic)[0];
    rep.l_wm = tape.value(l_wm)[0];
    rep.l_distill = tape.value(l_distill)[0];
    rep.l_conj = tape.value(l_conj)[0];
    rep.l_total = tape.value(total)[0];
    rep.lambda_c = lambda_c_;
    rep.cost_penalty = penalty_acc * inv_b;
    if (!std::isfinite(rep.l_total)) {
      if (!cfg_.emergency_path.empty()) {
        Checkpoint ck;
        model_.write_into(ck);
        ck.meta["reason"] = "non-finite loss";
        ck.save(cfg_.emergency_path);
      }
      throw ModelHealthError("train_batch: non-finite total loss");
    }

    tape.backward(total);
    GradMap grads = tape.grads();
    rep.grad_norm = clip_global_norm(grads, cfg_.grad_clip);
    auto stores = model_.store_map();
    adam_.step(stores, grads);
    model_.polyak_targets(cfg_.tau);
    return rep;
  }

  // Collect environment steps with the current policy into the buffer.
  void collect(EpochReport& report) {
    const ModelConfig& mc = model_.cfg;
    Rng rng = Rng::derive(seed_, 1000 + static_cast<uint64_t>(epoch_));
    int steps = 0;
    double cost_sum = 0.0, ret_sum = 0.0, delta_sum = 0.0;
    int episodes = 0;
    while (steps < cfg_.steps_per_epoch) {
      TaskSpec task = sample_task(mc.env, cfg_.alpha_train, rng);
      double delta = rng.uniform(cfg_.budget_min, cfg_.budget_max);
      PolicyFn agent = cfg_.collect_shield == ShieldMode::Off
                           ? base_policy_agent(rng)
                           : make_shield_agent(model_,
                                               ShieldOptions{cfg_.collect_shield,
                                                             cfg_.shield_ns, 1.0},
                                               rng);
      ContextResult res = run_context(agent, task, cfg_.episodes_per_context,
                                      mc.env.horizon, delta);
      for (const auto& ep : res.episodes) {
        cost_sum += ep.total_cost();
        ret_sum += ep.total_reward();
        delta_sum += delta;
        ++episodes;
        steps += static_cast<int>(ep.transitions.size());
      }
      buffer_.add_context(res.flat_transitions());
    }
    report.collect_episodes = episodes;
    if (episodes > 0) {
      report.collect_avg_cost = cost_sum / episodes;
      report.collect_avg_return = ret_sum / episodes;
      report.collect_avg_delta = delta_sum / episodes;
    }
  }

  // Small base-policy evaluation for the training log.
  void quick_eval(EpochReport& report) {
    const ModelConfig& mc = model_.cfg;
    Rng rng = Rng::derive(seed_, 3000 + static_cast<uint64_t>(epoch_));
    double ret = 0.0, cost = 0.0;
    int episodes = 0;
    for (int i = 0; i < cfg_.eval_contexts; ++i) {
      TaskSpec task = sample_task(mc.env, cfg_.alpha_train, rng);
      double delta = rng.uniform(cfg_.budget_min, cfg_.budget_max);
      ContextResult res = run_context(base_policy_agent(rng), task,
                                      cfg_.episodes_per_context, mc.env.horizon, delta);
      for (const auto& ep : res.episodes) {
        ret += ep.total_reward();
        cost += ep.total_cost();
        ++episodes;
      }
    }
    if (episodes > 0) {
      report.eval_return = ret / episodes;
      report.eval_cost = cost / episodes;
    }
  }

  // Unshielded sampler from the base policy.
  PolicyFn base_policy_agent(Rng& rng) {
    Model& model = model_;
    return [&model, &rng](const std::vector<Transition>& history,
                          const std::vector<float>& obs, double /*budget*/, int /*k*/,
                          int /*t*/) -> ActionChoice {
      const ModelConfig& mc = model.cfg;
      ContextWindow w = make_window(mc.env, mc.codec.window, history, obs);
      LatentTriple lat = encode(model.codec, mc.codec, mc.env, w);
      ActionChoice choice;
      choice.action =
          policy_sample(model.policy, mc.policy, mc.env, mc.codec.d_m, lat.z_p, rng);
      return choice;
    };
  }

 private:
  Model& model_;
  TrainConfig cfg_;
  uint64_t seed_;
  ReplayBuffer buffer_;
  Adam adam_;
  double lambda_c_;
  int epoch_ = 0;
};

}  // namespace qb
