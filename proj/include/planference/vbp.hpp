#pragma once

#include <functional>
#include <iosfwd>
#include <vector>

#include "planference/model.hpp"

namespace planference {

// Factor graph of a factored MDP unrolled over the horizon. Variables are
// x^(j)_t for t = 1..T; one action node per step t = 1..T-1. Dynamics
// factors join (x^pa(i)_t, a_t, x^(i)_{t+1}); reward factors join
// x^pa(r)_t at the steps where they are active.
struct GraphFactor {
  enum class Kind { Dynamics, Reward };
  Kind kind = Kind::Dynamics;
  int source = 0;  // entity index for dynamics, reward index for rewards
  int t = 1;
  std::vector<int> parents;
  std::vector<int> cards;
  std::size_t num_configs = 1;
  std::vector<int> digits;  // num_configs x parents.size(), first parent most significant

  int digit(std::size_t cfg, std::size_t k) const { return digits[cfg * parents.size() + k]; }
};

struct VariableLink {
  int factor = 0;
  int position = 0;  // index of the variable inside the factor's parent list
};

struct PlanningFactorGraph {
  int horizon = 1;
  int num_actions = 1;
  int num_entities = 0;
  std::vector<int> cards;
  std::vector<GraphFactor> factors;
  std::vector<std::vector<int>> slice_factors;          // [t-1] -> factor ids
  std::vector<std::vector<VariableLink>> variable_links;  // [var id] -> factors of the same slice

  int var_id(int t, int j) const { return (t - 1) * num_entities + j; }
  int num_variables() const { return horizon * num_entities; }
  int num_action_nodes() const { return horizon - 1; }
  int num_dynamics_factors() const;
  int num_reward_factors() const;
  // Dynamics factor of entity i at step t.
  int dynamics_factor(int t, int i) const { return slice_factors[t - 1][i]; }
};

PlanningFactorGraph build_graph(const FactoredMdp& mdp);

enum class UpdateFamily { Smoothed, MaxentRescaled, MaxentAdditive };

struct EpsilonSchedule {
  enum class Kind { InverseIter, Constant };
  Kind kind = Kind::InverseIter;
  double floor = 0.01;  // lower clamp for InverseIter
  double value = 1.0;   // Constant value
  int every = 1;        // InverseIter: outer iterations per step of 1/k

  double at(int outer_iteration) const;
  static EpsilonSchedule inverse_iter(double floor = 0.01, int every = 1) { return {Kind::InverseIter, floor, 1.0, every}; }
  static EpsilonSchedule constant(double eps) { return {Kind::Constant, 0.01, eps, 1}; }
};

struct VbpConfig {
  double lambda = 0.3;
  double alpha = 0.0;  // maxent families only
  UpdateFamily family = UpdateFamily::Smoothed;
  EpsilonSchedule epsilon;
  double damping = 0.5;
  int max_outer = 1000;
  double tolerance = 1e-8;
  int inner_cap = 200;
  double floor = -700.0;

  static VbpConfig ippc_preset();
  // Throws std::invalid_argument on inconsistent settings.
  void check() const;
};

// Log-space messages. Backward quantities of the maxent families hold the
// rescaled messages (log m-bar); the additive family holds additive values.
struct FactorMessages {
  std::vector<double> lmb_pa;  // m_b(x^pa), constant for reward factors
  std::vector<double> lmf_pa;  // m_f(x^pa)
  std::vector<std::vector<double>> lnf;  // [position][state] variable -> factor
  std::vector<std::vector<double>> lnb;  // [position][state] factor -> variable
  // Dynamics factors only.
  std::vector<double> lq;      // Q(x^pa, a), index cfg * A + a
  std::vector<double> lm_act;  // m^(i)(a)
  std::vector<double> ln_act;  // n^(i)(a)
};

struct MessageState {
  std::vector<FactorMessages> factors;
  std::vector<std::vector<double>> lmf_var;  // [var id] forward message into x^(j)_t
  std::vector<std::vector<double>> lmb_var;  // [var id] backward message into x^(j)_t
  long nonfinite = 0;                        // intermediates clamped to the floor
};

struct FactorBelief {
  std::vector<double> q_pa;    // parent configuration marginal
  std::vector<double> q_pa_a;  // dynamics only, cfg * A + a
};

struct VbpResult {
  double bound = 0.0;
  std::vector<std::vector<double>> action_beliefs;  // [t-1][a], t = 1..T-1
  std::vector<std::vector<double>> variable_beliefs;  // [var id][state]
  std::vector<FactorBelief> factor_beliefs;           // [factor id]
  bool converged = false;
  int iterations = 0;
  double residual = 0.0;
  long nonfinite = 0;
};

struct DiagnosticsRow {
  int iteration = 0;
  double epsilon = 0.0;
  double residual = 0.0;
  double bound = 0.0;
};

class VbpEngine {
 public:
  VbpEngine(const FactoredMdp& mdp, VbpConfig config);

  const PlanningFactorGraph& graph() const { return graph_; }
  const VbpConfig& config() const { return config_; }
  MessageState& messages() { return state_; }
  const MessageState& messages() const { return state_; }

  void init_messages();
  // One pass over the message families of slice t; returns the max change.
  double update_timeslice(int t, double eps);
  // Inner loop on slice t until the residual drops below tolerance.
  double solve_timeslice(int t, double eps);
  VbpResult run(const std::function<void(const DiagnosticsRow&)>& diagnostics = nullptr);

  double evaluate_bound() const;
  VbpResult snapshot() const;
  // Temperature used by the policy softmax: eps (smoothed) or alpha (maxent).
  double temperature(double eps) const;

 private:
  double weight() const;  // exponent applied to backward messages in beliefs
  double clampf(double v);
  void compute_beliefs(double eps, VbpResult& out) const;

  const FactoredMdp& mdp_;
  VbpConfig config_;
  PlanningFactorGraph graph_;
  std::vector<std::vector<double>> logp_;  // per entity, log CPT
  MessageState state_;
  double current_eps_ = 1.0;
};

VbpResult vbp_solve(const FactoredMdp& mdp, const VbpConfig& config,
                    const std::function<void(const DiagnosticsRow&)>& diagnostics = nullptr);

// Argmax of the action belief at step t, lowest index on ties.
int extract_action(const VbpResult& result, int t);

void write_diagnostics_header(std::ostream& os);
void write_diagnostics_row(std::ostream& os, const DiagnosticsRow& row);

}  // namespace planference
