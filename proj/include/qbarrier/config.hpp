// Flat key-value run configuration. Unknown keys are rejected; every run
// writes a resolved copy of its configuration next to its outputs.
#pragma once

#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include "qbarrier/cmdp.hpp"
#include "qbarrier/errors.hpp"
#include "qbarrier/model.hpp"
#include "qbarrier/sha256.hpp"
#include "qbarrier/shield.hpp"
#include "qbarrier/trainer.hpp"

namespace qb {

struct RunConfig {
  // Environment.
  std::string env_kind = "gridworld";  // gridworld | velocity
  int grid_size = 5;
  int n_obstacles = 5;
  int horizon = 0;          // 0: default per env kind (30 grid, 75 velocity)
  double alpha_train = -0.5;
  double alpha_test = 0.5;
  // Encoder.
  int window = 20;
  int d_z = 32;
  int d_m = 16;
  int hidden = 64;
  // Critics.
  int m_heads = 4;
  int k_c = 1;
  double gamma_r = 0.99;
  bool target_two_head_max = false;
  // Shield.
  int ns = 8;
  double temperature = 1.0;
  std::string shield = "soft";  // off | soft | hard
  // Training.
  int epochs = 30;
  int steps_per_epoch = 300;
  int batches_per_epoch = 100;
  int batch_size = 32;
  int episodes_per_context = 5;
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double grad_clip = 1.0;
  double tau = 0.005;
  int buffer_capacity = 20000;
  double lambda_critic = 10.0;
  double lambda_wm = 1.0;
  double lambda_distill = 0.1;
  double lambda_conj = 0.1;
  double alpha_bc = 0.1;
  double lambda_lr = 0.01;
  bool wm_detach_target = true;
  std::string collect_shield = "off";
  double budget_min = -1.0;  // <0: default per env kind ([1,15] grid, [0,5] velocity)
  double budget_max = -1.0;
  // Evaluation.
  int eval_tasks = 100;
  int eval_episodes = 10;
  double eval_budget = -1.0;  // <0: draw one budget per task from the range
  std::string budget_grid;    // comma-separated; empty: 0..15 (grid), 0..5 (velocity)
  // Misc.
  uint64_t seed = 1;

  EnvSpec env_spec() const {
    EnvSpec env;
    if (env_kind == "gridworld") {
      env.kind = EnvKind::Gridworld;
      env.horizon = horizon > 0 ? horizon : 30;
    } else if (env_kind == "velocity") {
      env.kind = EnvKind::Velocity;
      env.horizon = horizon > 0 ? horizon : 75;
    } else {
      throw ConfigError("env_kind must be gridworld or velocity");
    }
    env.grid_size = grid_size;
    env.n_obstacles = n_obstacles;
    return env;
  }

  double resolved_budget_min() const {
    if (budget_min >= 0.0) return budget_min;
    return env_kind == "gridworld" ? 1.0 : 0.0;
  }
  double resolved_budget_max() const {
    if (budget_max >= 0.0) return budget_max;
    return env_kind == "gridworld" ? 15.0 : 5.0;
  }

  ModelConfig model_config() const {
    ModelConfig mc;
    mc.env = env_spec();
    mc.codec.window = window;
    mc.codec.d_z = d_z;
    mc.codec.d_m = d_m;
    mc.codec.hidden = hidden;
    mc.critic.m_heads = m_heads;
    mc.critic.k_c = k_c;
    mc.critic.gamma_r = gamma_r;
    mc.critic.target_two_head_max = target_two_head_max;
    mc.sync_dims();
    return mc;
  }

  TrainConfig train_config() const {
    TrainConfig tc;
    tc.epochs = epochs;
    tc.steps_per_epoch = steps_per_epoch;
    tc.batches_per_epoch = batches_per_epoch;
    tc.batch_size = batch_size;
    tc.episodes_per_context = episodes_per_context;
    tc.lr = lr;
    tc.beta1 = beta1;
    tc.beta2 = beta2;
    tc.grad_clip = grad_clip;
    tc.tau = tau;
    tc.buffer_capacity = buffer_capacity;
    tc.lambda_critic = lambda_critic;
    tc.lambda_wm = lambda_wm;
    tc.lambda_distill = lambda_distill;
    tc.lambda_conj = lambda_conj;
    tc.alpha_bc = alpha_bc;
    tc.lambda_lr = lambda_lr;
    tc.alpha_train = alpha_train;
    tc.budget_min = resolved_budget_min();
    tc.budget_max = resolved_budget_max();
    tc.collect_shield = shield_mode_from_string(collect_shield);
    tc.shield_ns = ns;
    tc.wm_detach_target = wm_detach_target;
    return tc;
  }

  ShieldOptions shield_options() const {
    return ShieldOptions{shield_mode_from_string(shield), ns, temperature};
  }

  std::vector<double> resolved_budget_grid() const {
    std::vector<double> grid;
    if (!budget_grid.empty()) {
      std::stringstream ss(budget_grid);
      std::string tok;
      while (std::getline(ss, tok, ',')) {
        if (!tok.empty()) grid.push_back(std::stod(tok));
      }
      if (grid.empty()) throw ConfigError("budget_grid parsed to no entries");
      return grid;
    }
    int top = env_kind == "gridworld" ? 15 : 5;
    for (int b = 0; b <= top; ++b) grid.push_back(static_cast<double>(b));
    return grid;
  }

  // Canonical text form; also the digest input and the resolved-copy payload.
  std::string to_text() const;
  std::string digest() const { return Sha256::hash(to_text()).substr(0, 16); }

  void set(const std::string& key, const std::string& value);
  static RunConfig from_file(const std::string& path);
  void write(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw ConfigError("RunConfig::write: cannot open " + path);
    f << to_text();
  }
};

namespace detail {
inline bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  throw ConfigError("expected boolean, got: " + v);
}
}  // namespace detail

inline void RunConfig::set(const std::string& key, const std::string& v) {
  if (key == "env_kind") env_kind = v;
  else if (key == "grid_size") grid_size = std::stoi(v);
  else if (key == "n_obstacles") n_obstacles = std::stoi(v);
  else if (key == "horizon") horizon = std::stoi(v);
  else if (key == "alpha_train") alpha_train = std::stod(v);
  else if (key == "alpha_test") alpha_test = std::stod(v);
  else if (key == "window") window = std::stoi(v);
  else if (key == "d_z") d_z = std::stoi(v);
  else if (key == "d_m") d_m = std::stoi(v);
  else if (key == "hidden") hidden = std::stoi(v);
  else if (key == "m_heads") m_heads = std::stoi(v);
  else if (key == "k_c") k_c = std::stoi(v);
  else if (key == "gamma_r") gamma_r = std::stod(v);
  else if (key == "target_two_head_max") target_two_head_max = detail::parse_bool(v);
  else if (key == "ns") ns = std::stoi(v);
  else if (key == "temperature") temperature = std::stod(v);
  else if (key == "shield") shield = v;
  else if (key == "epochs") epochs = std::stoi(v);
  else if (key == "steps_per_epoch") steps_per_epoch = std::stoi(v);
  else if (key == "batches_per_epoch") batches_per_epoch = std::stoi(v);
  else if (key == "batch_size") batch_size = std::stoi(v);
  else if (key == "episodes_per_context") episodes_per_context = std::stoi(v);
  else if (key == "lr") lr = std::stod(v);
  else if (key == "beta1") beta1 = std::stod(v);
  else if (key == "beta2") beta2 = std::stod(v);
  else if (key == "grad_clip") grad_clip = std::stod(v);
  else if (key == "tau") tau = std::stod(v);
  else if (key == "buffer_capacity") buffer_capacity = std::stoi(v);
  else if (key == "lambda_critic") lambda_critic = std::stod(v);
  else if (key == "lambda_wm") lambda_wm = std::stod(v);
  else if (key == "lambda_distill") lambda_distill = std::stod(v);
  else if (key == "lambda_conj") lambda_conj = std::stod(v);
  else if (key == "alpha_bc") alpha_bc = std::stod(v);
  else if (key == "lambda_lr") lambda_lr = std::stod(v);
  else if (key == "wm_detach_target") wm_detach_target = detail::parse_bool(v);
  else if (key == "collect_shield") collect_shield = v;
  else if (key == "budget_min") budget_min = std::stod(v);
  else if (key == "budget_max") budget_max = std::stod(v);
  else if (key == "eval_tasks") eval_tasks = std::stoi(v);
  else if (key == "eval_episodes") eval_episodes = std::stoi(v);
  else if (key == "eval_budget") eval_budget = std::stod(v);
  else if (key == "budget_grid") budget_grid = v;
  else if (key == "seed") seed = std::stoull(v);
  else throw ConfigError("unknown config key: " + key);
}

inline std::string RunConfig::to_text() const {
  std::ostringstream o;
  o << "env_kind = " << env_kind << "\n";
  o << "grid_size = " << grid_size << "\n";
  o << "n_obstacles = " << n_obstacles << "\n";
  o << "horizon = " << horizon << "\n";
  o << "alpha_train = " << alpha_train << "\n";
  o << "alpha_test = " << alpha_test << "\n";
  o << "window = " << window << "\n";
  o << "d_z = " << d_z << "\n";
  o << "d_m = " << d_m << "\n";
  o << "hidden = " << hidden << "\n";
  o << "m_heads = " << m_heads << "\n";
  o << "k_c = " << k_c << "\n";
  o << "gamma_r = " << gamma_r << "\n";
  o << "target_two_head_max = " << (target_two_head_max ? "true" : "false") << "\n";
  o << "ns = " << ns << "\n";
  o << "temperature = " << temperature << "\n";
  o << "shield = " << shield << "\n";
  o << "epochs = " << epochs << "\n";
  o << "steps_per_epoch = " << steps_per_epoch << "\n";
  o << "batches_per_epoch = " << batches_per_epoch << "\n";
  o << "batch_size = " << batch_size << "\n";
  o << "episodes_per_context = " << episodes_per_context << "\n";
  o << "lr = " << lr << "\n";
  o << "beta1 = " << beta1 << "\n";
  o << "beta2 = " << beta2 << "\n";
  o << "grad_clip = " << grad_clip << "\n";
  o << "tau = " << tau << "\n";
  o << "buffer_capacity = " << buffer_capacity << "\n";
  o << "lambda_critic = " << lambda_critic << "\n";
  o << "lambda_wm = " << lambda_wm << "\n";
  o << "lambda_distill = " << lambda_distill << "\n";
  o << "lambda_conj = " << lambda_conj << "\n";
  o << "alpha_bc = " << alpha_bc << "\n";
  o << "lambda_lr = " << lambda_lr << "\n";
  o << "wm_detach_target = " << (wm_detach_target ? "true" : "false") << "\n";
  o << "collect_shield = " << collect_shield << "\n";
  o << "budget_min = " << budget_min << "\n";
  o << "budget_max = " << budget_max << "\n";
  o << "eval_tasks = " << eval_tasks << "\n";
  o << "eval_episodes = " << eval_episodes << "\n";
  o << "eval_budget = " << eval_budget << "\n";
  o << "budget_grid = " << budget_grid << "\n";
  o << "seed = " << seed << "\n";
  return o.str();
}

inline RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("config file not found: " + path);
  RunConfig cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    size_t h = line.find('#');
    if (h != std::string::npos) line = line.substr(0, h);
    auto trim = [](std::string s) {
      size_t a = s.find_first_not_of(" \t");
      if (a == std::string::npos) return std::string();
      size_t b = s.find_last_not_of(" \t");
      return s.substr(a, b - a + 1);
    };
    line = trim(line);
    if (line.empty()) continue;
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    cfg.set(key, value);
  }
  return cfg;
}

}  // namespace qb
