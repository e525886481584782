#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "qbarrier/world_model.hpp"
#include "test_util.hpp"

using namespace qb;
using qbtest::tiny_grid_model;

TEST_CASE("predict: zero-initialized net outputs bias images") {
  Model m = tiny_grid_model();
  for (auto& [k, t] : m.wm.tensors())
    for (auto& v : t.data) v = 0.0f;
  for (auto& v : m.wm.at("mean/b0").data) v = 0.3f;
  // Zero log-std head: std = exp(0) = 1 (inside the clamp range).
  std::vector<double> z_w(m.cfg.codec.d_m, 0.4);
  LatentPrediction p = wm_predict(m.wm, m.cfg.wm, m.cfg.env, z_w, {1.0f});
  for (double v : p.mean) REQUIRE(v == Catch::Approx(0.3).margin(1e-7));
  for (double ls : p.log_std) REQUIRE(std::exp(ls) == Catch::Approx(1.0).margin(1e-12));
  REQUIRE(p.reward == 0.0);
  REQUIRE(p.cost == 0.0);
}

TEST_CASE("predict: stddev is clamped to [1e-3, 10]") {
  Model m = tiny_grid_model();
  for (auto& v : m.wm.at("lstd/b0").data) v = 50.0f;
  std::vector<double> z_w(m.cfg.codec.d_m, 0.1);
  LatentPrediction hi = wm_predict(m.wm, m.cfg.wm, m.cfg.env, z_w, {0.0f});
  for (double ls : hi.log_std) REQUIRE(std::exp(ls) <= 10.0 + 1e-12);
  for (auto& v : m.wm.at("lstd/b0").data) v = -50.0f;
  LatentPrediction lo = wm_predict(m.wm, m.cfg.wm, m.cfg.env, z_w, {0.0f});
  for (double ls : lo.log_std) REQUIRE(std::exp(ls) >= 1e-3 - 1e-15);
}

TEST_CASE("predict: log-density at the mean is the Gaussian normalizer") {
  Model m = tiny_grid_model();
  Rng rng(3);
  std::vector<double> z_w(m.cfg.codec.d_m);
  for (auto& v : z_w) v = rng.uniform(-1.0, 1.0);
  LatentPrediction p = wm_predict(m.wm, m.cfg.wm, m.cfg.env, z_w, {2.0f});
  double expected = 0.0;
  for (double ls : p.log_std) expected += -ls - 0.5 * std::log(2.0 * M_PI);
  REQUIRE(wm_log_density(p, p.mean) == Catch::Approx(expected).margin(1e-10));
}

TEST_CASE("predict: sample mean converges to the predictive mean") {
  Model m = tiny_grid_model();
  std::vector<double> z_w(m.cfg.codec.d_m, 0.2);
  LatentPrediction p = wm_predict(m.wm, m.cfg.wm, m.cfg.env, z_w, {3.0f});
  Rng rng(44);
  const int n = 10000;
  std::vector<double> acc(p.mean.size(), 0.0);
  for (int i = 0; i < n; ++i) {
    auto s = wm_sample(p, rng);
    for (size_t j = 0; j < s.size(); ++j) acc[j] += s[j];
  }
  for (size_t j = 0; j < acc.size(); ++j) {
    double mc = acc[j] / n;
    double sigma = std::exp(p.log_std[j]);
    REQUIRE(std::abs(mc - p.mean[j]) <= 3.0 * sigma / std::sqrt(double(n)));
  }
}

TEST_CASE("predict: gradient of the negative log-density matches finite differences") {
  Model m = tiny_grid_model();
  Rng rng(9);
  std::vector<double> z_w(m.cfg.codec.d_m);
  for (auto& v : z_w) v = rng.uniform(-0.5, 0.5);
  std::vector<double> target(m.cfg.codec.d_m);
  for (auto& v : target) v = rng.uniform(-0.5, 0.5);
  std::vector<float> action = {2.0f};

  auto loss_eval = [&]() {
    Tape t;
    WmVars p = wm_predict_var(t, m.wm, m.cfg.wm, m.cfg.env, t.input(z_w), action);
    return t.value(t.gaussian_nll(p.mean, p.log_std, target))[0];
  };
  Tape tape;
  WmVars p = wm_predict_var(tape, m.wm, m.cfg.wm, m.cfg.env, tape.input(z_w), action);
  Var loss = tape.gaussian_nll(p.mean, p.log_std, target);
  tape.backward(loss);
  std::map<std::string, ParamStore*> stores = {{"wm", &m.wm}};
  auto rep = qbtest::finite_difference_check(stores, tape.grads(), loss_eval);
  INFO("worst: " << rep.worst_param);
  REQUIRE(rep.max_rel_err <= 1e-4);
}

TEST_CASE("wm loss: perfect reward/cost predictor zeroes the squared terms") {
  Model m = tiny_grid_model();
  // Zero every head then set reward/cost biases to the targets.
  for (auto& [k, t] : m.wm.tensors())
    for (auto& v : t.data) v = 0.0f;
  m.wm.at("rew/b0").data[0] = 1.0f;
  m.wm.at("cost/b0").data[0] = 0.5f;
  std::vector<double> z_w(m.cfg.codec.d_m, 0.0);
  std::vector<double> z_next(m.cfg.codec.d_m, 0.0);

  Tape tape;
  Var loss = wm_loss_term(tape, m.wm, m.cfg.wm, m.cfg.env, tape.input(z_w), {0.0f},
                          z_next, /*reward=*/1.0, /*cost=*/0.5);
  // mean = 0 = target, std = 1: residual is just the Gaussian normalizer.
  double expected = m.cfg.codec.d_m * 0.5 * std::log(2.0 * M_PI);
  REQUIRE(tape.value(loss)[0] == Catch::Approx(expected).margin(1e-9));
}

TEST_CASE("wm loss: constant-zero reward head on a half 0/1 batch costs 0.5") {
  Model m = tiny_grid_model();
  for (auto& [k, t] : m.wm.tensors())
    for (auto& v : t.data) v = 0.0f;
  std::vector<double> z_w(m.cfg.codec.d_m, 0.0);
  std::vector<double> z_next(m.cfg.codec.d_m, 0.0);
  Tape tape;
  Var l0 = wm_loss_term(tape, m.wm, m.cfg.wm, m.cfg.env, tape.input(z_w), {0.0f},
                        z_next, 0.0, 0.0);
  Var l1 = wm_loss_term(tape, m.wm, m.cfg.wm, m.cfg.env, tape.input(z_w), {0.0f},
                        z_next, 1.0, 0.0);
  double base = m.cfg.codec.d_m * 0.5 * std::log(2.0 * M_PI);
  double reward_term =
      0.5 * (tape.value(l0)[0] - base) + 0.5 * (tape.value(l1)[0] - base);
  REQUIRE(reward_term == Catch::Approx(0.5).margin(1e-9));
}

TEST_CASE("wm loss: matches a scalar re-computation on random inputs") {
  Model m = tiny_grid_model();
  Rng rng(13);
  std::vector<double> z_w(m.cfg.codec.d_m), z_next(m.cfg.codec.d_m);
  for (auto& v : z_w) v = rng.uniform(-1.0, 1.0);
  for (auto& v : z_next) v = rng.uniform(-1.0, 1.0);
  std::vector<float> action = {1.0f};
  double reward = 0.7, cost = 0.2;

  Tape tape;
  Var loss = wm_loss_term(tape, m.wm, m.cfg.wm, m.cfg.env, tape.input(z_w), action,
                          z_next, reward, cost);

  LatentPrediction p = wm_predict(m.wm, m.cfg.wm, m.cfg.env, z_w, action);
  double nll = 0.0;
  for (size_t i = 0; i < p.mean.size(); ++i) {
    double u = (z_next[i] - p.mean[i]) / std::exp(p.log_std[i]);
    nll += p.log_std[i] + 0.5 * u * u + 0.5 * std::log(2.0 * M_PI);
  }
  double expected = nll + (p.reward - reward) * (p.reward - reward) +
                    (p.cost - cost) * (p.cost - cost);
  REQUIRE(tape.value(loss)[0] == Catch::Approx(expected).margin(1e-10));
}

TEST_CASE("distill loss: zero under head equality, with exact gradient routing") {
  Model m = tiny_grid_model();
  Rng rng(21);
  ContextWindow w = qbtest::random_window(m, rng);

  SECTION("copied heads give exactly zero loss") {
    m.codec.at("gp/W0").data = m.codec.at("gw/W0").data;
    m.codec.at("gp/b0").data = m.codec.at("gw/b0").data;
    Tape tape;
    Var z = encode_z_var(tape, m.codec, m.cfg.codec, m.cfg.env, w);
    Var loss = distill_loss_term(tape, m.codec, m.cfg.codec, z);
    REQUIRE(tape.value(loss)[0] == 0.0);
  }

  SECTION("gradients reach only the policy head") {
    Tape tape;
    Var z = encode_z_var(tape, m.codec, m.cfg.codec, m.cfg.env, w);
    Var loss = distill_loss_term(tape, m.codec, m.cfg.codec, z);
    tape.backward(loss);
    for (auto key : {"enc/W0", "enc/b0", "enc/W1", "enc/b1", "enc/W2", "enc/b2", "gw/W0", "gw/b0"})
      REQUIRE(qbtest::grad_all_zero(tape.grad_of(m.codec, key)));
    REQUIRE_FALSE(qbtest::grad_all_zero(tape.grad_of(m.codec, "gp/W0")));
  }
}

TEST_CASE("conjugacy loss: zero cases and scalar oracle") {
  Model m = tiny_grid_model();
  Rng rng(22);
  ContextWindow w1 = qbtest::random_window(m, rng);
  ContextWindow w2 = qbtest::random_window(m, rng);

  SECTION("identical latents give zero") {
    Tape tape;
    Var z = encode_z_var(tape, m.codec, m.cfg.codec, m.cfg.env, w1);
    Var loss = conjugacy_loss_term(tape, m.codec, m.cfg.codec, z, z);
    REQUIRE(tape.value(loss)[0] == 0.0);
  }
  SECTION("identical heads give zero") {
    m.codec.at("gp/W0").data = m.codec.at("gw/W0").data;
    m.codec.at("gp/b0").data = m.codec.at("gw/b0").data;
    Tape tape;
    Var z1 = encode_z_var(tape, m.codec, m.cfg.codec, m.cfg.env, w1);
    Var z2 = encode_z_var(tape, m.codec, m.cfg.codec, m.cfg.env, w2);
    Var loss = conjugacy_loss_term(tape, m.codec, m.cfg.codec, z1, z2);
    REQUIRE(tape.value(loss)[0] == Catch::Approx(0.0).margin(1e-24));
  }
  SECTION("random heads match a hand expansion") {
    Tape tape;
    Var z1 = encode_z_var(tape, m.codec, m.cfg.codec, m.cfg.env, w1);
    Var z2 = encode_z_var(tape, m.codec, m.cfg.codec, m.cfg.env, w2);
    Var loss = conjugacy_loss_term(tape, m.codec, m.cfg.codec, z1, z2);
    auto zp1 = project_p(m.codec, m.cfg.codec, tape.value(z1));
    auto zp2 = project_p(m.codec, m.cfg.codec, tape.value(z2));
    auto zw1 = project_w(m.codec, m.cfg.codec, tape.value(z1));
    auto zw2 = project_w(m.codec, m.cfg.codec, tape.value(z2));
    double expected = 0.0;
    for (size_t i = 0; i < zp1.size(); ++i) {
      double d = (zp2[i] - zp1[i]) - (zw2[i] - zw1[i]);
      expected += d * d;
    }
    REQUIRE(tape.value(loss)[0] == Catch::Approx(expected).margin(1e-12));
  }
  SECTION("gradients reach only the policy head") {
    Tape tape;
    Var z1 = encode_z_var(tape, m.codec, m.cfg.codec, m.cfg.env, w1);
    Var z2 = encode_z_var(tape, m.codec, m.cfg.codec, m.cfg.env, w2);
    Var loss = conjugacy_loss_term(tape, m.codec, m.cfg.codec, z1, z2);
    tape.backward(loss);
    for (auto key : {"enc/W0", "enc/b0", "enc/W1", "enc/b1", "enc/W2", "enc/b2", "gw/W0", "gw/b0"})
      REQUIRE(qbtest::grad_all_zero(tape.grad_of(m.codec, key)));
    REQUIRE_FALSE(qbtest::grad_all_zero(tape.grad_of(m.codec, "gp/W0")));
  }
}

TEST_CASE("wm loss: gradients flow into the encoder through the current latent") {
  Model m = tiny_grid_model();
  Rng rng(33);
  ContextWindow w = qbtest::random_window(m, rng);
  std::vector<double> z_next(m.cfg.codec.d_m, 0.3);
  Tape tape;
  EncodeVars enc = encode_var(tape, m.codec, m.cfg.codec, m.cfg.env, w);
  Var loss = wm_loss_term(tape, m.wm, m.cfg.wm, m.cfg.env, enc.z_w, {1.0f}, z_next,
                          0.5, 0.0);
  tape.backward(loss);
  REQUIRE_FALSE(qbtest::grad_all_zero(tape.grad_of(m.codec, "enc/W0")));
  REQUIRE_FALSE(qbtest::grad_all_zero(tape.grad_of(m.codec, "gw/W0")));
  // The policy head is untouched by the dynamics loss.
  REQUIRE(qbtest::grad_all_zero(tape.grad_of(m.codec, "gp/W0")));
}
