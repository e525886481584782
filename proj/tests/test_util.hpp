// Shared helpers for the test suites: a central finite-difference gradient
// checker and small model builders.
#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "qbarrier/cmdp.hpp"
#include "qbarrier/gradnet.hpp"
#include "qbarrier/model.hpp"

namespace qbtest {

using namespace qb;

struct FdReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  int n_checked = 0;
};

// Central finite differences with float32 parameter perturbation. The loss
// callback must rebuild its tape from the stores' current values. The actual
// realized parameter delta is measured after float quantization, which keeps
// the quotient exact.
inline FdReport finite_difference_check(
    std::map<std::string, ParamStore*> stores, const GradMap& analytic,
    const std::function<double()>& loss_fn, double h = 1e-3) {
  FdReport rep;
  for (const auto& [key, grad] : analytic) {
    auto slash = key.find('/');
    ParamStore* ps = stores.at(key.substr(0, slash));
    Tensor& t = ps->at(key.substr(slash + 1));
    for (size_t i = 0; i < t.data.size(); ++i) {
      float p0 = t.data[i];
      float hi = static_cast<float>(static_cast<double>(p0) + h);
      float lo = static_cast<float>(static_cast<double>(p0) - h);
      t.data[i] = hi;
      double l_hi = loss_fn();
      t.data[i] = lo;
      double l_lo = loss_fn();
      t.data[i] = p0;
      double denom = static_cast<double>(hi) - static_cast<double>(lo);
      double fd = (l_hi - l_lo) / denom;
      double g = grad[i];
      double rel = std::abs(fd - g) / std::max({std::abs(fd), std::abs(g), 1e-3});
      if (rel > rep.max_rel_err) {
        rep.max_rel_err = rel;
        rep.worst_param = key + "[" + std::to_string(i) + "]";
      }
      ++rep.n_checked;
    }
  }
  return rep;
}

// Tiny gridworld model: every individual network stays under 1000 parameters
// so gradient sweeps are fast.
inline Model tiny_grid_model(uint64_t seed = 7) {
  Model m;
  m.cfg.env.kind = EnvKind::Gridworld;
  m.cfg.env.grid_size = 3;
  m.cfg.env.n_obstacles = 2;
  m.cfg.env.horizon = 12;
  m.cfg.codec.window = 3;
  m.cfg.codec.d_z = 8;
  m.cfg.codec.d_m = 4;
  m.cfg.codec.hidden = 6;
  m.cfg.critic.m_heads = 2;
  m.cfg.sync_dims();
  m.init(seed);
  return m;
}

inline Model tiny_velocity_model(uint64_t seed = 7) {
  Model m;
  m.cfg.env.kind = EnvKind::Velocity;
  m.cfg.env.horizon = 20;
  m.cfg.codec.window = 3;
  m.cfg.codec.d_z = 8;
  m.cfg.codec.d_m = 4;
  m.cfg.codec.hidden = 6;
  m.cfg.critic.m_heads = 2;
  m.cfg.sync_dims();
  m.init(seed);
  return m;
}

// A random but well-formed context window for a model.
inline ContextWindow random_window(const Model& m, Rng& rng, int n_history = 5) {
  const EnvSpec& env = m.cfg.env;
  std::vector<Transition> hist;
  for (int i = 0; i < n_history; ++i) {
    Transition tr;
    for (int d = 0; d < env.state_dim(); ++d)
      tr.state.push_back(static_cast<float>(rng.uniform()));
    if (env.discrete())
      tr.action = {static_cast<float>(rng.uniform_int(env.n_actions()))};
    else
      tr.action = {static_cast<float>(rng.uniform(-1.0, 1.0))};
    for (int d = 0; d < env.state_dim(); ++d)
      tr.next_state.push_back(static_cast<float>(rng.uniform()));
    tr.reward = static_cast<float>(rng.uniform());
    tr.cost = static_cast<float>(rng.uniform());
    tr.done = false;
    tr.d_ctx = false;
    hist.push_back(tr);
  }
  std::vector<float> state;
  for (int d = 0; d < env.state_dim(); ++d)
    state.push_back(static_cast<float>(rng.uniform()));
  return make_window(env, m.cfg.codec.window, hist, state);
}

inline bool tensors_equal(const ParamStore& a, const ParamStore& b) {
  if (a.tensors().size() != b.tensors().size()) return false;
  for (const auto& [k, t] : a.tensors()) {
    if (!b.has(k)) return false;
    const Tensor& u = b.at(k);
    if (t.shape != u.shape || t.data != u.data) return false;
  }
  return true;
}

inline bool grad_all_zero(const std::vector<double>& g) {
  for (double v : g)
    if (v != 0.0) return false;
  return true;
}

}  // namespace qbtest
