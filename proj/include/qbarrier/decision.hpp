// Record of one shielded action selection, kept alongside trajectory logs so
// margin diagnostics can be recomputed offline.
#pragma once

#include <string>
#include <vector>

namespace qb {

struct ShieldDecision {
  int context_id = 0;
  int episode_k = 0;  // 1-based episode index within the context
  int t = 0;          // step index within the episode
  std::string mode;   // "off" | "soft" | "hard"
  std::string origin; // "enumerated-discrete" | "sampled-continuous"
  bool fallback = false;
  std::vector<std::vector<float>> candidates;  // action representation per candidate
  std::vector<double> rho;     // base weights
  std::vector<double> q_plus;  // pessimistic predicted cost-to-go per candidate
  std::vector<double> b_q;     // per-candidate margins
  std::vector<double> probs;   // output distribution
  double b_v = 0.0;            // state margin
  double budget = 0.0;         // remaining budget when the decision was made
  int chosen = -1;             // index into candidates
  std::vector<int> tie_set;    // argmin-cost candidates (fallback tie set)
  std::string policy_snapshot; // digest prefix of the frozen parameters
};

}  // namespace qb
