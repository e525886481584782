#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "qbarrier/trainer.hpp"
#include "test_util.hpp"

using namespace qb;
using qbtest::tiny_grid_model;
using qbtest::tiny_velocity_model;

namespace {

TrainConfig tiny_train_config() {
  TrainConfig tc;
  tc.steps_per_epoch = 60;
  tc.batches_per_epoch = 8;
  tc.batch_size = 8;
  tc.episodes_per_context = 2;
  tc.eval_contexts = 1;
  tc.buffer_capacity = 2000;
  return tc;
}

void set_reward_heads(ParamStore& qr, int m_heads, float v) {
  for (int i = 0; i < m_heads; ++i) {
    std::string p = head_prefix(i);
    for (auto& x : qr.at(p + "/W0").data) x = 0.0f;
    for (auto& x : qr.at(p + "/b0").data) x = 0.0f;
    for (auto& x : qr.at(p + "/W1").data) x = 0.0f;
    qr.at(p + "/b1").data[0] = v;
  }
}

}  // namespace

TEST_CASE("lagrange update: projection and fixed points") {
  REQUIRE(lagrange_update(0.4, 3.0, 3.0, 0.1) == 0.4);   // cost == delta
  REQUIRE(lagrange_update(0.0, 1.0, 3.0, 0.1) == 0.0);   // projection at zero
  REQUIRE(lagrange_update(0.0, 4.0, 3.0, 0.1) == Catch::Approx(0.1));
  REQUIRE_THROWS_AS(lagrange_update(0.0, 1.0, 1.0, -0.5), ContractError);
  // Nonnegativity under arbitrary update sequences.
  Rng rng(3);
  double lam = 0.0;
  for (int i = 0; i < 1000; ++i) {
    lam = lagrange_update(lam, rng.uniform(0.0, 10.0), rng.uniform(0.0, 10.0),
                          rng.uniform(0.0, 0.5));
    REQUIRE(lam >= 0.0);
  }
}

TEST_CASE("replay buffer: capacity and adjacency") {
  ReplayBuffer buf(12);
  auto mk = [](int n, int tag) {
    std::vector<Transition> ctx;
    for (int i = 0; i < n; ++i) {
      Transition tr;
      tr.state = {static_cast<float>(tag), static_cast<float>(i)};
      tr.action = {0.0f};
      tr.next_state = {static_cast<float>(tag), static_cast<float>(i + 1)};
      ctx.push_back(tr);
    }
    return ctx;
  };
  buf.add_context(mk(6, 0));
  buf.add_context(mk(6, 1));
  REQUIRE(buf.n_contexts() == 2);
  buf.add_context(mk(6, 2));  // evicts the oldest context
  REQUIRE(buf.size() <= 12);
  Rng rng(1);
  for (int i = 0; i < 100; ++i) {
    auto s = buf.sample(rng);
    REQUIRE(s.t < static_cast<int>(s.context->size()));
    // Window pairs stay within one context by construction.
    REQUIRE((*s.context)[s.t].state[0] != 0.0f);
  }
}

TEST_CASE("actor loss: weight zeroing isolates the improvement term") {
  Model m = tiny_grid_model();
  Rng rng(4);
  ContextWindow w = qbtest::random_window(m, rng);
  BatchItem item;
  item.window_t = w;
  item.action = {1.0f};

  Tape tape;
  EncodeVars enc = encode_var(tape, m.codec, m.cfg.codec, m.cfg.env, w);
  Rng arng(5);
  ActorContext actx =
      prepare_actor_context(m, tape.value(enc.z), tape.value(enc.z_w),
                            tape.value(enc.z_p), item, 20.0, arng);
  ActorLossParts parts =
      actor_loss_term(tape, m, enc, actx, item, /*lambda_c=*/0.0, /*alpha_bc=*/0.0);
  // Pure improvement term: -E_{a~pi} Q_mean(Z, a).
  const auto& z = tape.value(enc.z);
  const auto& zp = tape.value(enc.z_p);
  auto probs = policy_probs(m.policy, m.cfg.policy, m.cfg.env, m.cfg.codec.d_m, zp);
  double expected = 0.0;
  for (int a = 0; a < 5; ++a)
    expected -= probs[a] * q_mean(m.qr, m.cfg.critic, m.cfg.codec.d_z, m.cfg.env, z,
                                  {static_cast<float>(a)});
  REQUIRE(tape.value(parts.loss)[0] == Catch::Approx(expected).margin(1e-10));
}

TEST_CASE("actor loss: uniform policy over known critic values averages them") {
  Model m = tiny_grid_model();
  // Uniform policy: zero the policy net.
  for (auto& [k, t] : m.policy.tensors())
    for (auto& v : t.data) v = 0.0f;
  // Reward critics: constant 1 for action 0, else 0 is not expressible with
  // constant heads; instead set all reward heads to a constant and check the
  // expectation reduces to it.
  set_reward_heads(m.qr, m.cfg.critic.m_heads, 1.0f);
  Rng rng(6);
  ContextWindow w = qbtest::random_window(m, rng);
  BatchItem item;
  item.window_t = w;
  item.action = {0.0f};
  Tape tape;
  EncodeVars enc = encode_var(tape, m.codec, m.cfg.codec, m.cfg.env, w);
  Rng arng(7);
  ActorContext actx =
      prepare_actor_context(m, tape.value(enc.z), tape.value(enc.z_w),
                            tape.value(enc.z_p), item, 20.0, arng);
  ActorLossParts parts = actor_loss_term(tape, m, enc, actx, item, 0.0, 0.0);
  REQUIRE(tape.value(parts.loss)[0] == Catch::Approx(-1.0).margin(1e-10));
}

TEST_CASE("actor loss: gradient matches finite differences (policy parameters)") {
  Model m = tiny_grid_model();
  Rng rng(8);
  ContextWindow w = qbtest::random_window(m, rng);
  BatchItem item;
  item.window_t = w;
  item.action = {2.0f};

  // The detached ingredients (critic tables, cloning weight) are prepared once
  // and held fixed, which pins the loss's differentiable surface.
  Rng arng(11);
  Tape tape0;
  EncodeVars enc0 = encode_var(tape0, m.codec, m.cfg.codec, m.cfg.env, w);
  ActorContext actx =
      prepare_actor_context(m, tape0.value(enc0.z), tape0.value(enc0.z_w),
                            tape0.value(enc0.z_p), item, 20.0, arng);
  auto loss_eval = [&]() {
    Tape t;
    EncodeVars enc = encode_var(t, m.codec, m.cfg.codec, m.cfg.env, w);
    ActorLossParts parts = actor_loss_term(t, m, enc, actx, item, 0.3, 0.1);
    return t.value(parts.loss)[0];
  };
  Tape tape;
  EncodeVars enc = encode_var(tape, m.codec, m.cfg.codec, m.cfg.env, w);
  ActorLossParts parts = actor_loss_term(tape, m, enc, actx, item, 0.3, 0.1);
  tape.backward(parts.loss);
  GradMap grads;
  for (const auto& [k, t] : m.policy.tensors())
    grads["policy/" + k] = tape.grad_of(m.policy, k);
  for (auto key : {"enc/W0", "enc/b0", "enc/W1", "enc/b1", "enc/W2", "enc/b2", "gp/W0", "gp/b0"})
    grads["codec/" + std::string(key)] = tape.grad_of(m.codec, key);
  std::map<std::string, ParamStore*> stores = {{"policy", &m.policy},
                                               {"codec", &m.codec}};
  auto rep = qbtest::finite_difference_check(stores, grads, loss_eval);
  INFO("worst: " << rep.worst_param);
  REQUIRE(rep.max_rel_err <= 1e-4);
}

TEST_CASE("actor loss: critics receive exactly zero gradient") {
  for (bool velocity : {false, true}) {
    Model m = velocity ? tiny_velocity_model() : tiny_grid_model();
    Rng rng(9);
    ContextWindow w = qbtest::random_window(m, rng);
    BatchItem item;
    item.window_t = w;
    item.action = velocity ? std::vector<float>{0.25f} : std::vector<float>{1.0f};
    Tape tape;
    EncodeVars enc = encode_var(tape, m.codec, m.cfg.codec, m.cfg.env, w);
    Rng arng(10);
    ActorContext actx =
        prepare_actor_context(m, tape.value(enc.z), tape.value(enc.z_w),
                              tape.value(enc.z_p), item, 20.0, arng);
    ActorLossParts parts = actor_loss_term(tape, m, enc, actx, item, 0.5, 0.1);
    tape.backward(parts.loss);
    for (const auto& [k, t] : m.qc.tensors())
      REQUIRE(qbtest::grad_all_zero(tape.grad_of(m.qc, k)));
    for (const auto& [k, t] : m.qr.tensors())
      REQUIRE(qbtest::grad_all_zero(tape.grad_of(m.qr, k)));
    // The policy head itself is trained.
    bool any = false;
    for (const auto& [k, t] : m.policy.tensors())
      if (!qbtest::grad_all_zero(tape.grad_of(m.policy, k))) any = true;
    REQUIRE(any);
  }
}

TEST_CASE("train_epoch: loss ledger, determinism and target updates") {
  SECTION("zero update batches leave parameters unchanged") {
    Model m = tiny_grid_model();
    std::string before = m.param_digest();
    TrainConfig tc = tiny_train_config();
    tc.batches_per_epoch = 0;
    tc.tau = 0.5;  // would be visible if polyak ran
    Trainer trainer(m, tc, 42);
    trainer.train_epoch();
    REQUIRE(m.param_digest() == before);
  }

  SECTION("identical seeds give identical loss series and parameters") {
    Model m1 = tiny_grid_model(3);
    Model m2 = tiny_grid_model(3);
    TrainConfig tc = tiny_train_config();
    Trainer t1(m1, tc, 42), t2(m2, tc, 42);
    for (int e = 0; e < 2; ++e) {
      EpochReport r1 = t1.train_epoch();
      EpochReport r2 = t2.train_epoch();
      REQUIRE(r1.batches.size() == r2.batches.size());
      for (size_t i = 0; i < r1.batches.size(); ++i) {
        REQUIRE(r1.batches[i].l_total == r2.batches[i].l_total);
        REQUIRE(r1.batches[i].grad_norm == r2.batches[i].grad_norm);
      }
    }
    REQUIRE(m1.param_digest() == m2.param_digest());
  }

  SECTION("the total is the weighted sum of the reported components") {
    Model m = tiny_grid_model(5);
    TrainConfig tc = tiny_train_config();
    Trainer trainer(m, tc, 7);
    EpochReport rep = trainer.train_epoch();
    for (const auto& b : rep.batches) {
      double recomputed = b.l_actor + tc.lambda_critic * b.l_critic +
                          tc.lambda_wm * b.l_wm + tc.lambda_distill * b.l_distill +
                          tc.lambda_conj * b.l_conj;
      REQUIRE(std::abs(recomputed - b.l_total) <= 1e-6);
    }
  }

  SECTION("target stores move toward online stores") {
    Model m = tiny_grid_model(6);
    TrainConfig tc = tiny_train_config();
    tc.tau = 0.25;
    Trainer trainer(m, tc, 9);
    std::string tgt_before = params_digest({&m.qc_tgt});
    trainer.train_epoch();
    REQUIRE(params_digest({&m.qc_tgt}) != tgt_before);
  }
}

TEST_CASE("train_epoch: velocity toy trains end to end") {
  Model m = tiny_velocity_model(4);
  TrainConfig tc = tiny_train_config();
  tc.budget_min = 0.0;
  tc.budget_max = 5.0;
  Trainer trainer(m, tc, 11);
  EpochReport rep = trainer.train_epoch();
  REQUIRE(rep.batches.size() == 8);
  for (const auto& b : rep.batches) REQUIRE(std::isfinite(b.l_total));
}

TEST_CASE("training loss trends down on a small gridworld") {
  // Median over seeds of (mean total loss, first 3 epochs) vs (last 3 of 12):
  // the trend must be down even though individual epochs fluctuate.
  std::vector<double> deltas;
  for (uint64_t seed : {1ULL, 2ULL, 3ULL}) {
    Model m = tiny_grid_model(seed);
    TrainConfig tc = tiny_train_config();
    tc.steps_per_epoch = 90;
    tc.batches_per_epoch = 12;
    tc.batch_size = 12;
    Trainer trainer(m, tc, seed);
    std::vector<double> totals;
    for (int e = 0; e < 12; ++e) totals.push_back(trainer.train_epoch().mean().l_total);
    double head = (totals[0] + totals[1] + totals[2]) / 3.0;
    double tail = (totals[9] + totals[10] + totals[11]) / 3.0;
    deltas.push_back(head - tail);
  }
  std::sort(deltas.begin(), deltas.end());
  REQUIRE(deltas[1] > 0.0);  // median improvement
}
