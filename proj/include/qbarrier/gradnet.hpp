// Minimal dense-network substrate: named float32 parameter tensors, a
// reverse-mode tape with stop-gradient barriers, an adaptive-moment optimizer
// and Polyak target averaging. Forward values and gradient accumulators are
// 64-bit; parameters are stored as 32-bit floats.
#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "qbarrier/errors.hpp"
#include "qbarrier/rng.hpp"

namespace qb {

struct Tensor {
  std::vector<float> data;
  std::vector<int> shape;

  int64_t numel() const {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
  }
};

class ParamStore {
 public:
  ParamStore() = default;
  explicit ParamStore(std::string name) : name_(std::move(name)) {}

  const std::string& name() const { return name_; }
  void set_name(std::string n) { name_ = std::move(n); }
  uint64_t version() const { return version_; }
  void bump_version() { ++version_; }

  Tensor& add(const std::string& key, std::vector<int> shape,
              std::vector<float> data) {
    int64_t n = 1;
    for (int d : shape) n *= d;
    if (static_cast<int64_t>(data.size()) != n)
      throw ConfigError("ParamStore::add: data size does not match shape for " + key);
    Tensor t;
    t.data = std::move(data);
    t.shape = std::move(shape);
    auto [it, inserted] = tensors_.emplace(key, std::move(t));
    if (!inserted) throw ConfigError("ParamStore::add: duplicate key " + key);
    ++version_;
    return it->second;
  }

  bool has(const std::string& key) const { return tensors_.count(key) > 0; }

  Tensor& at(const std::string& key) {
    auto it = tensors_.find(key);
    if (it == tensors_.end())
      throw ConfigError("ParamStore " + name_ + ": unknown tensor " + key);
    return it->second;
  }
  const Tensor& at(const std::string& key) const {
    auto it = tensors_.find(key);
    if (it == tensors_.end())
      throw ConfigError("ParamStore " + name_ + ": unknown tensor " + key);
    return it->second;
  }

  std::map<std::string, Tensor>& tensors() { return tensors_; }
  const std::map<std::string, Tensor>& tensors() const { return tensors_; }

  int64_t total_params() const {
    int64_t n = 0;
    for (const auto& [k, t] : tensors_) n += t.numel();
    return n;
  }

  bool all_finite() const {
    for (const auto& [k, t] : tensors_)
      for (float v : t.data)
        if (!std::isfinite(v)) return false;
    return true;
  }

 private:
  std::string name_;
  std::map<std::string, Tensor> tensors_;
  uint64_t version_ = 0;
};

// Gradients keyed by "<store>/<tensor>"; std::map so iteration order is
// canonical (matters for bitwise-deterministic norm accumulation).
using GradMap = std::map<std::string, std::vector<double>>;

struct Var {
  int id = -1;
};

class Tape {
 public:
  struct Node {
    std::vector<double> val;
    std::vector<double> grad;  // sized lazily, in backward
    std::function<void(Tape&, const Node&)> back;
    bool stop = false;                    // gradient barrier: nothing accumulates here
    const ParamStore* store = nullptr;    // set for trainable parameter leaves
    std::string pname;
  };

  Var input(std::vector<double> v) {
    Node n;
    n.val = std::move(v);
    n.stop = true;  // plain data: no gradient bookkeeping
    return push(std::move(n));
  }

  // Trainable parameter leaf. One node per (store, tensor); repeated requests
  // return the cached node so gradients accumulate in one place.
  Var param(const ParamStore& ps, const std::string& key) {
    auto ck = std::make_pair(&ps, key);
    auto it = cache_.find(ck);
    if (it != cache_.end()) return Var{it->second};
    const Tensor& t = ps.at(key);
    Node n;
    n.val.assign(t.data.begin(), t.data.end());
    n.store = &ps;
    n.pname = key;
    Var v = push(std::move(n));
    cache_[ck] = v.id;
    return v;
  }

  // Frozen parameter leaf: same values, but a gradient barrier. Used when a
  // loss term must evaluate a network without training it.
  Var param_frozen(const ParamStore& ps, const std::string& key) {
    auto ck = std::make_pair(&ps, key);
    auto it = frozen_cache_.find(ck);
    if (it != frozen_cache_.end()) return Var{it->second};
    const Tensor& t = ps.at(key);
    Node n;
    n.val.assign(t.data.begin(), t.data.end());
    n.stop = true;
    Var v = push(std::move(n));
    frozen_cache_[ck] = v.id;
    return v;
  }

  Var stop_grad(Var x) {
    Node n;
    n.val = nodes_[x.id].val;
    n.stop = true;
    return push(std::move(n));
  }

  // y[i] = sum_j W[i*in+j] * x[j] + b[i]; W shaped [out, in].
  Var affine(Var w, Var b, Var x) {
    const auto& wv = nodes_[w.id].val;
    const auto& bv = nodes_[b.id].val;
    const auto& xv = nodes_[x.id].val;
    size_t out = bv.size();
    if (out == 0 || wv.size() % out != 0)
      throw ConfigError("affine: weight/bias size mismatch");
    size_t in = wv.size() / out;
    if (xv.size() != in)
      throw ConfigError("affine: input length " + std::to_string(xv.size()) +
                        " does not match weight columns " + std::to_string(in));
    Node n;
    n.val.resize(out);
    for (size_t i = 0; i < out; ++i) {
      double acc = bv[i];
      const double* wr = wv.data() + i * in;
      for (size_t j = 0; j < in; ++j) acc += wr[j] * xv[j];
      n.val[i] = acc;
    }
    int wi = w.id, bi = b.id, xi = x.id;
    n.back = [wi, bi, xi, out, in](Tape& t, const Node& self) {
      const auto& g = self.grad;
      const auto& wv = t.nodes_[wi].val;
      const auto& xv = t.nodes_[xi].val;
      if (double* gw = t.grad_buf(wi)) {
        for (size_t i = 0; i < out; ++i)
          for (size_t j = 0; j < in; ++j) gw[i * in + j] += g[i] * xv[j];
      }
      if (double* gb = t.grad_buf(bi)) {
        for (size_t i = 0; i < out; ++i) gb[i] += g[i];
      }
      if (double* gx = t.grad_buf(xi)) {
        for (size_t i = 0; i < out; ++i) {
          const double* wr = wv.data() + i * in;
          for (size_t j = 0; j < in; ++j) gx[j] += g[i] * wr[j];
        }
      }
    };
    return push(std::move(n));
  }

  Var tanh_(Var x) {
    Node n;
    n.val.resize(nodes_[x.id].val.size());
    for (size_t i = 0; i < n.val.size(); ++i) n.val[i] = std::tanh(nodes_[x.id].val[i]);
    int xi = x.id;
    n.back = [xi](Tape& t, const Node& self) {
      if (double* gx = t.grad_buf(xi))
        for (size_t i = 0; i < self.val.size(); ++i)
          gx[i] += self.grad[i] * (1.0 - self.val[i] * self.val[i]);
    };
    return push(std::move(n));
  }

  Var exp_(Var x) {
    Node n;
    n.val.resize(nodes_[x.id].val.size());
    for (size_t i = 0; i < n.val.size(); ++i) n.val[i] = std::exp(nodes_[x.id].val[i]);
    int xi = x.id;
    n.back = [xi](Tape& t, const Node& self) {
      if (double* gx = t.grad_buf(xi))
        for (size_t i = 0; i < self.val.size(); ++i) gx[i] += self.grad[i] * self.val[i];
    };
    return push(std::move(n));
  }

  // Hard clamp; subgradient zero outside (lo, hi).
  Var clamp_(Var x, double lo, double hi) {
    const auto& xv = nodes_[x.id].val;
    Node n;
    n.val.resize(xv.size());
    for (size_t i = 0; i < xv.size(); ++i) n.val[i] = std::min(std::max(xv[i], lo), hi);
    int xi = x.id;
    n.back = [xi, lo, hi](Tape& t, const Node& self) {
      if (double* gx = t.grad_buf(xi)) {
        const auto& xv = t.nodes_[xi].val;
        for (size_t i = 0; i < self.val.size(); ++i)
          if (xv[i] > lo && xv[i] < hi) gx[i] += self.grad[i];
      }
    };
    return push(std::move(n));
  }

  Var add(Var a, Var b) { return binary(a, b, /*sign=*/+1.0); }
  Var sub(Var a, Var b) { return binary(a, b, /*sign=*/-1.0); }

  Var mul(Var a, Var b) {
    const auto& av = nodes_[a.id].val;
    const auto& bv = nodes_[b.id].val;
    if (av.size() != bv.size()) throw ConfigError("mul: size mismatch");
    Node n;
    n.val.resize(av.size());
    for (size_t i = 0; i < av.size(); ++i) n.val[i] = av[i] * bv[i];
    int ai = a.id, bi = b.id;
    n.back = [ai, bi](Tape& t, const Node& self) {
      const auto& av = t.nodes_[ai].val;
      const auto& bv = t.nodes_[bi].val;
      if (double* ga = t.grad_buf(ai))
        for (size_t i = 0; i < self.val.size(); ++i) ga[i] += self.grad[i] * bv[i];
      if (double* gb = t.grad_buf(bi))
        for (size_t i = 0; i < self.val.size(); ++i) gb[i] += self.grad[i] * av[i];
    };
    return push(std::move(n));
  }

  // y_i = x_i * s_0 for a one-element scaling node.
  Var scale_vec(Var x, Var s) {
    const auto& xv = nodes_[x.id].val;
    const auto& sv = nodes_[s.id].val;
    if (sv.size() != 1) throw ConfigError("scale_vec: scalar node must have size 1");
    Node n;
    n.val.resize(xv.size());
    for (size_t i = 0; i < xv.size(); ++i) n.val[i] = xv[i] * sv[0];
    int xi = x.id, si = s.id;
    n.back = [xi, si](Tape& t, const Node& self) {
      const auto& xv = t.nodes_[xi].val;
      double s0 = t.nodes_[si].val[0];
      if (double* gx = t.grad_buf(xi))
        for (size_t i = 0; i < self.val.size(); ++i) gx[i] += self.grad[i] * s0;
      if (double* gs = t.grad_buf(si)) {
        double acc = 0.0;
        for (size_t i = 0; i < self.val.size(); ++i) acc += self.grad[i] * xv[i];
        gs[0] += acc;
      }
    };
    return push(std::move(n));
  }

  Var scale(Var x, double s) {
    Node n;
    n.val.resize(nodes_[x.id].val.size());
    for (size_t i = 0; i < n.val.size(); ++i) n.val[i] = s * nodes_[x.id].val[i];
    int xi = x.id;
    n.back = [xi, s](Tape& t, const Node& self) {
      if (double* gx = t.grad_buf(xi))
        for (size_t i = 0; i < self.val.size(); ++i) gx[i] += s * self.grad[i];
    };
    return push(std::move(n));
  }

  Var add_const(Var x, double c) {
    Node n;
    n.val.resize(nodes_[x.id].val.size());
    for (size_t i = 0; i < n.val.size(); ++i) n.val[i] = nodes_[x.id].val[i] + c;
    int xi = x.id;
    n.back = [xi](Tape& t, const Node& self) {
      if (double* gx = t.grad_buf(xi))
        for (size_t i = 0; i < self.val.size(); ++i) gx[i] += self.grad[i];
    };
    return push(std::move(n));
  }

  Var concat(Var a, Var b) {
    const auto& av = nodes_[a.id].val;
    const auto& bv = nodes_[b.id].val;
    Node n;
    n.val = av;
    n.val.insert(n.val.end(), bv.begin(), bv.end());
    int ai = a.id, bi = b.id;
    size_t na = av.size();
    n.back = [ai, bi, na](Tape& t, const Node& self) {
      if (double* ga = t.grad_buf(ai))
        for (size_t i = 0; i < na; ++i) ga[i] += self.grad[i];
      if (double* gb = t.grad_buf(bi))
        for (size_t i = na; i < self.val.size(); ++i) gb[i - na] += self.grad[i];
    };
    return push(std::move(n));
  }

  Var sum(Var x) {
    double acc = 0.0;
    for (double v : nodes_[x.id].val) acc += v;
    Node n;
    n.val = {acc};
    int xi = x.id;
    n.back = [xi](Tape& t, const Node& self) {
      if (double* gx = t.grad_buf(xi)) {
        size_t m = t.nodes_[xi].val.size();
        for (size_t i = 0; i < m; ++i) gx[i] += self.grad[0];
      }
    };
    return push(std::move(n));
  }

  Var dot(Var a, Var b) {
    const auto& av = nodes_[a.id].val;
    const auto& bv = nodes_[b.id].val;
    if (av.size() != bv.size()) throw ConfigError("dot: size mismatch");
    double acc = 0.0;
    for (size_t i = 0; i < av.size(); ++i) acc += av[i] * bv[i];
    Node n;
    n.val = {acc};
    int ai = a.id, bi = b.id;
    n.back = [ai, bi](Tape& t, const Node& self) {
      const auto& av = t.nodes_[ai].val;
      const auto& bv = t.nodes_[bi].val;
      if (double* ga = t.grad_buf(ai))
        for (size_t i = 0; i < av.size(); ++i) ga[i] += self.grad[0] * bv[i];
      if (double* gb = t.grad_buf(bi))
        for (size_t i = 0; i < bv.size(); ++i) gb[i] += self.grad[0] * av[i];
    };
    return push(std::move(n));
  }

  // Max over components; gradient routes to the first argmax.
  Var max_(Var x) {
    const auto& xv = nodes_[x.id].val;
    if (xv.empty()) throw ContractError("max_: empty vector");
    size_t arg = 0;
    for (size_t i = 1; i < xv.size(); ++i)
      if (xv[i] > xv[arg]) arg = i;
    Node n;
    n.val = {xv[arg]};
    int xi = x.id;
    n.back = [xi, arg](Tape& t, const Node& self) {
      if (double* gx = t.grad_buf(xi)) gx[arg] += self.grad[0];
    };
    return push(std::move(n));
  }

  Var pick(Var x, int idx) {
    const auto& xv = nodes_[x.id].val;
    if (idx < 0 || static_cast<size_t>(idx) >= xv.size())
      throw ContractError("pick: index out of range");
    Node n;
    n.val = {xv[idx]};
    int xi = x.id;
    n.back = [xi, idx](Tape& t, const Node& self) {
      if (double* gx = t.grad_buf(xi)) gx[idx] += self.grad[0];
    };
    return push(std::move(n));
  }

  Var softmax_(Var x) {
    const auto& xv = nodes_[x.id].val;
    Node n;
    n.val.resize(xv.size());
    double mx = xv[0];
    for (double v : xv) mx = std::max(mx, v);
    double z = 0.0;
    for (size_t i = 0; i < xv.size(); ++i) {
      n.val[i] = std::exp(xv[i] - mx);
      z += n.val[i];
    }
    for (auto& v : n.val) v /= z;
    int xi = x.id;
    n.back = [xi](Tape& t, const Node& self) {
      if (double* gx = t.grad_buf(xi)) {
        double dotg = 0.0;
        for (size_t j = 0; j < self.val.size(); ++j) dotg += self.grad[j] * self.val[j];
        for (size_t i = 0; i < self.val.size(); ++i)
          gx[i] += self.val[i] * (self.grad[i] - dotg);
      }
    };
    return push(std::move(n));
  }

  Var log_softmax_(Var x) {
    const auto& xv = nodes_[x.id].val;
    Node n;
    n.val.resize(xv.size());
    double mx = xv[0];
    for (double v : xv) mx = std::max(mx, v);
    double z = 0.0;
    for (double v : xv) z += std::exp(v - mx);
    double lz = mx + std::log(z);
    for (size_t i = 0; i < xv.size(); ++i) n.val[i] = xv[i] - lz;
    int xi = x.id;
    n.back = [xi](Tape& t, const Node& self) {
      if (double* gx = t.grad_buf(xi)) {
        double gsum = 0.0;
        for (double g : self.grad) gsum += g;
        for (size_t i = 0; i < self.val.size(); ++i)
          gx[i] += self.grad[i] - std::exp(self.val[i]) * gsum;
      }
    };
    return push(std::move(n));
  }

  // Negative log-density of a diagonal Gaussian at a fixed target:
  // sum_i [ log_std_i + 0.5*((t_i-mu_i)/sigma_i)^2 + 0.5*log(2*pi) ].
  Var gaussian_nll(Var mean, Var log_std, std::vector<double> target) {
    const auto& mv = nodes_[mean.id].val;
    const auto& lv = nodes_[log_std.id].val;
    if (mv.size() != lv.size() || mv.size() != target.size())
      throw ConfigError("gaussian_nll: size mismatch");
    double acc = 0.0;
    for (size_t i = 0; i < mv.size(); ++i) {
      double u = (target[i] - mv[i]) * std::exp(-lv[i]);
      acc += lv[i] + 0.5 * u * u + 0.5 * std::log(2.0 * M_PI);
    }
    Node n;
    n.val = {acc};
    int mi = mean.id, li = log_std.id;
    n.back = [mi, li, target = std::move(target)](Tape& t, const Node& self) {
      const auto& mv = t.nodes_[mi].val;
      const auto& lv = t.nodes_[li].val;
      double g = self.grad[0];
      double* gm = t.grad_buf(mi);
      double* gl = t.grad_buf(li);
      for (size_t i = 0; i < mv.size(); ++i) {
        double u = (target[i] - mv[i]) * std::exp(-lv[i]);
        if (gm) gm[i] += g * (mv[i] - target[i]) * std::exp(-2.0 * lv[i]);
        if (gl) gl[i] += g * (1.0 - u * u);
      }
    };
    return push(std::move(n));
  }

  const std::vector<double>& value(Var v) const { return nodes_.at(v.id).val; }

  void backward(Var root) {
    const auto& rv = nodes_.at(root.id).val;
    if (rv.size() != 1) throw ContractError("backward: root must be scalar");
    backward(root, {1.0});
  }

  void backward(Var root, std::vector<double> seed) {
    if (consumed_) throw UsageError("Tape::backward: tape already consumed");
    consumed_ = true;
    Node& r = nodes_.at(root.id);
    if (seed.size() != r.val.size())
      throw ContractError("backward: seed size does not match root");
    if (!r.stop) r.grad = std::move(seed);
    for (int i = root.id; i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.grad.empty() || !n.back) continue;
      n.back(*this, n);
    }
  }

  // Gradients of trainable parameter leaves, keyed "<store>/<tensor>".
  // Leaves never touched by the loss report exact zeros.
  GradMap grads() const {
    GradMap out;
    for (const auto& [key, id] : cache_) {
      const Node& n = nodes_[id];
      std::string name = n.store->name() + "/" + n.pname;
      if (n.grad.empty())
        out[name] = std::vector<double>(n.val.size(), 0.0);
      else
        out[name] = n.grad;
    }
    return out;
  }

  // Accumulated gradient for one tensor; zeros if the parameter never entered
  // this tape as a trainable leaf.
  std::vector<double> grad_of(const ParamStore& ps, const std::string& key) const {
    auto it = cache_.find(std::make_pair(&ps, key));
    if (it == cache_.end())
      return std::vector<double>(ps.at(key).numel(), 0.0);
    const Node& n = nodes_[it->second];
    if (n.grad.empty()) return std::vector<double>(n.val.size(), 0.0);
    return n.grad;
  }

  size_t size() const { return nodes_.size(); }

 private:
  friend struct Node;

  Var push(Node n) {
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  // Returns the gradient buffer of a node, or nullptr if it is a barrier.
  double* grad_buf(int id) {
    Node& n = nodes_[id];
    if (n.stop) return nullptr;
    if (n.grad.empty()) n.grad.assign(n.val.size(), 0.0);
    return n.grad.data();
  }

  Var binary(Var a, Var b, double sign) {
    const auto& av = nodes_[a.id].val;
    const auto& bv = nodes_[b.id].val;
    if (av.size() != bv.size()) throw ConfigError("add/sub: size mismatch");
    Node n;
    n.val.resize(av.size());
    for (size_t i = 0; i < av.size(); ++i) n.val[i] = av[i] + sign * bv[i];
    int ai = a.id, bi = b.id;
    n.back = [ai, bi, sign](Tape& t, const Node& self) {
      if (double* ga = t.grad_buf(ai))
        for (size_t i = 0; i < self.val.size(); ++i) ga[i] += self.grad[i];
      if (double* gb = t.grad_buf(bi))
        for (size_t i = 0; i < self.val.size(); ++i) gb[i] += sign * self.grad[i];
    };
    return push(std::move(n));
  }

  std::vector<Node> nodes_;
  bool consumed_ = false;
  std::map<std::pair<const ParamStore*, std::string>, int> cache_;
  std::map<std::pair<const ParamStore*, std::string>, int> frozen_cache_;
};

// ---------------------------------------------------------------------------
// MLP helpers. widths = [in, h1, ..., out]; hidden layers are tanh, the output
// layer is linear unless tanh_out is set.

struct MlpSpec {
  std::vector<int> widths;
  bool tanh_out = false;

  int n_layers() const { return static_cast<int>(widths.size()) - 1; }
  int in_dim() const { return widths.front(); }
  int out_dim() const { return widths.back(); }
};

inline void mlp_init(ParamStore& ps, const std::string& prefix, const MlpSpec& spec,
                     Rng& rng) {
  for (int l = 0; l < spec.n_layers(); ++l) {
    int in = spec.widths[l], out = spec.widths[l + 1];
    double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::vector<float> w(static_cast<size_t>(in) * out), b(out);
    for (auto& v : w) v = static_cast<float>(rng.uniform(-bound, bound));
    for (auto& v : b) v = static_cast<float>(rng.uniform(-bound, bound));
    ps.add(prefix + "/W" + std::to_string(l), {out, in}, std::move(w));
    ps.add(prefix + "/b" + std::to_string(l), {out}, std::move(b));
  }
}

inline Var mlp_forward(Tape& tape, const ParamStore& ps, const std::string& prefix,
                       const MlpSpec& spec, Var x, bool frozen = false) {
  if (static_cast<int>(tape.value(x).size()) != spec.in_dim())
    throw ConfigError("mlp_forward: input length does not match spec");
  Var h = x;
  for (int l = 0; l < spec.n_layers(); ++l) {
    Var w = frozen ? tape.param_frozen(ps, prefix + "/W" + std::to_string(l))
                   : tape.param(ps, prefix + "/W" + std::to_string(l));
    Var b = frozen ? tape.param_frozen(ps, prefix + "/b" + std::to_string(l))
                   : tape.param(ps, prefix + "/b" + std::to_string(l));
    h = tape.affine(w, b, h);
    if (l + 1 < spec.n_layers() || spec.tanh_out) h = tape.tanh_(h);
  }
  return h;
}

// Tape-free forward pass with identical arithmetic (same op order, doubles).
inline std::vector<double> mlp_apply(const ParamStore& ps, const std::string& prefix,
                                     const MlpSpec& spec, std::vector<double> x) {
  if (static_cast<int>(x.size()) != spec.in_dim())
    throw ConfigError("mlp_apply: input length does not match spec");
  for (int l = 0; l < spec.n_layers(); ++l) {
    const Tensor& w = ps.at(prefix + "/W" + std::to_string(l));
    const Tensor& b = ps.at(prefix + "/b" + std::to_string(l));
    int out = w.shape[0], in = w.shape[1];
    std::vector<double> y(out);
    for (int i = 0; i < out; ++i) {
      double acc = static_cast<double>(b.data[i]);
      for (int j = 0; j < in; ++j)
        acc += static_cast<double>(w.data[i * in + j]) * x[j];
      y[i] = acc;
    }
    if (l + 1 < spec.n_layers() || spec.tanh_out)
      for (auto& v : y) v = std::tanh(v);
    x = std::move(y);
  }
  return x;
}

// ---------------------------------------------------------------------------
// Optimizer and target updates.

inline double clip_global_norm(GradMap& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& [k, g] : grads)
    for (double v : g) sq += v * v;
  double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    double s = max_norm / norm;
    for (auto& [k, g] : grads)
      for (double& v : g) v *= s;
  }
  return norm;
}

// Adam with float32 moment storage and double update arithmetic, so optimizer
// state round-trips exactly through checkpoints.
class Adam {
 public:
  Adam(double lr = 3e-4, double beta1 = 0.9, double beta2 = 0.99, double eps = 1e-8)
      : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps), m_("adam_m"), v_("adam_v") {}

  int64_t step_count() const { return t_; }
  void set_step_count(int64_t t) { t_ = t; }
  ParamStore& moments_m() { return m_; }
  ParamStore& moments_v() { return v_; }

  void step(std::map<std::string, ParamStore*>& stores, const GradMap& grads) {
    ++t_;
    double bc1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (const auto& [key, g] : grads) {
      auto slash = key.find('/');
      if (slash == std::string::npos)
        throw ConfigError("Adam::step: malformed grad key " + key);
      auto sit = stores.find(key.substr(0, slash));
      if (sit == stores.end())
        throw ConfigError("Adam::step: unknown store in key " + key);
      Tensor& p = sit->second->at(key.substr(slash + 1));
      if (p.numel() != static_cast<int64_t>(g.size()))
        throw ConfigError("Adam::step: grad size mismatch for " + key);
      for (double gv : g)
        if (!std::isfinite(gv))
          throw ModelHealthError("Adam::step: non-finite gradient for " + key);
      Tensor& m = moment(m_, key, g.size());
      Tensor& v = moment(v_, key, g.size());
      for (size_t i = 0; i < g.size(); ++i) {
        double mi = b1_ * static_cast<double>(m.data[i]) + (1.0 - b1_) * g[i];
        double vi = b2_ * static_cast<double>(v.data[i]) + (1.0 - b2_) * g[i] * g[i];
        m.data[i] = static_cast<float>(mi);
        v.data[i] = static_cast<float>(vi);
        double mhat = mi / bc1;
        double vhat = vi / bc2;
        double upd = static_cast<double>(p.data[i]) - lr_ * mhat / (std::sqrt(vhat) + eps_);
        p.data[i] = static_cast<float>(upd);
        if (!std::isfinite(p.data[i]))
          throw ModelHealthError("Adam::step: non-finite parameter after update: " + key);
      }
      sit->second->bump_version();
    }
  }

 private:
  static Tensor& moment(ParamStore& ps, const std::string& key, size_t n) {
    if (!ps.has(key))
      ps.add(key, {static_cast<int>(n)}, std::vector<float>(n, 0.0f));
    return ps.at(key);
  }

  double lr_, b1_, b2_, eps_;
  int64_t t_ = 0;
  ParamStore m_, v_;
};

// target <- (1-tau)*target + tau*online, elementwise.
inline void polyak_update(ParamStore& target, const ParamStore& online, double tau) {
  if (tau < 0.0 || tau > 1.0) throw ConfigError("polyak_update: tau outside [0,1]");
  for (auto& [key, tgt] : target.tensors()) {
    const Tensor& src = online.at(key);
    if (src.shape != tgt.shape)
      throw ConfigError("polyak_update: shape mismatch for " + key);
    for (size_t i = 0; i < tgt.data.size(); ++i) {
      double blended = (1.0 - tau) * static_cast<double>(tgt.data[i]) +
                       tau * static_cast<double>(src.data[i]);
      tgt.data[i] = static_cast<float>(blended);
    }
  }
  target.bump_version();
}

}  // namespace qb
