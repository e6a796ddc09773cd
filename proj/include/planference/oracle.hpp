#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "planference/model.hpp"

namespace planference {

// Exact quantities of interest on enumerated MDPs. Values are in utility
// units: (1/lambda) log of the relevant sum/max for lambda > 0, and the
// expected additive return for lambda == 0 (handled analytically).

// pi_t(a|x) for t = 1..T-1, stored as table[t-1][x * A + a].
struct Policy {
  int num_states = 0;
  int num_actions = 0;
  std::vector<std::vector<double>> table;

  double prob(int t, int x, int a) const { return table[t - 1][static_cast<std::size_t>(x) * num_actions + a]; }
  static Policy deterministic(int num_states, int num_actions, const std::vector<std::vector<int>>& choice);
  static Policy uniform(int num_states, int num_actions, int horizon);
};

struct OracleResult {
  double value = 0.0;
  std::optional<Policy> policy;       // planning
  std::vector<int> actions;           // MMAP sequence, or MAP actions
  std::vector<int> states;            // MAP trajectory x_1..x_T
  // Backward tables per step t = 1..T (index t-1): log m_b(x_t) for
  // lambda > 0, additive value-to-go for lambda == 0.
  std::vector<std::vector<double>> backward;
};

OracleResult plan_value_iteration(const FlatMdp& flat, double lambda);
OracleResult marginal(const FlatMdp& flat, double lambda);
OracleResult marginal_uniform(const FlatMdp& flat, double lambda);
OracleResult map_viterbi(const FlatMdp& flat, double lambda);
OracleResult mmap_enumerate(const FlatMdp& flat, double lambda, std::size_t cap = 1u << 20);

// Best open-loop action sequence by exponential utility; lambda == 0 gives
// the best expected additive return. Same as mmap_enumerate for lambda > 0.
OracleResult conformant_search(const FlatMdp& flat, double lambda, std::size_t cap = 1u << 20);

double policy_evaluate(const FlatMdp& flat, const Policy& policy, double lambda);
// Exact utility when the first action is fixed and all later ones are optimal.
std::vector<double> first_action_values(const FlatMdp& flat, double lambda);
OracleResult brute_force_policy_search(const FlatMdp& flat, double lambda, std::size_t cap = 1u << 20);

double log_sum_exp(const double* v, std::size_t n);
double log_sum_exp(const std::vector<double>& v);

}  // namespace planference
