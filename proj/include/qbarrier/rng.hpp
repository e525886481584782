// Deterministic random streams. All distributions are hand-rolled on top of
// mt19937_64 so that sampled sequences are stable across standard libraries.
#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "qbarrier/errors.hpp"

namespace qb {

class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : gen_(seed) {}

  // Derive an independent stream; SplitMix-style mixing of (seed, stream id).
  static Rng derive(uint64_t seed, uint64_t stream) {
    uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return Rng(z ^ (z >> 31));
  }

  uint64_t next_u64() { return gen_(); }

  // Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  int uniform_int(int n) {
    if (n <= 0) throw ContractError("uniform_int: n must be positive");
    // Rejection sampling to avoid modulo bias.
    uint64_t limit = UINT64_MAX - UINT64_MAX % static_cast<uint64_t>(n);
    uint64_t v = gen_();
    while (v >= limit) v = gen_();
    return static_cast<int>(v % static_cast<uint64_t>(n));
  }

  // Standard normal via Box-Muller (no cached spare; two draws per call).
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Sample an index from an unnormalized nonnegative weight vector.
  int categorical(const std::vector<double>& weights) {
    double total = 0.0;
    for (double w : weights) {
      if (w < 0.0 || !std::isfinite(w))
        throw ContractError("categorical: weights must be finite and >= 0");
      total += w;
    }
    if (total <= 0.0) throw ContractError("categorical: zero total weight");
    double r = uniform() * total;
    double acc = 0.0;
    for (size_t i = 0; i < weights.size(); ++i) {
      acc += weights[i];
      if (r < acc) return static_cast<int>(i);
    }
    return static_cast<int>(weights.size()) - 1;
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace qb
