#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "planference/model.hpp"

namespace planference {

// maximize objective . x  subject to  rows (= rhs),  x >= 0.
struct LpProgram {
  struct Row {
    std::vector<int> idx;
    std::vector<double> val;
    double rhs = 0.0;
    std::string name;
  };
  std::vector<std::string> names;
  std::vector<double> objective;
  std::vector<Row> rows;

  int num_vars() const { return static_cast<int>(names.size()); }
  int add_var(std::string name, double cost = 0.0);
  void add_row(Row row);
};

// CPLEX-style textual listing, for feeding the program to an external solver.
void write_lp(const LpProgram& program, std::ostream& os);

enum class LpStatus { Optimal, Infeasible, Unbounded, IterationLimit };
std::string lp_status_name(LpStatus s);

struct SolveReport {
  LpStatus status = LpStatus::Optimal;
  double objective = 0.0;
  std::vector<double> x;
  double primal_residual = 0.0;  // max |row . x - rhs|
  long iterations = 0;
};

class LpSolver {
 public:
  virtual ~LpSolver() = default;
  virtual SolveReport solve(const LpProgram& program, double tol) const = 0;
};

// Dense two-phase primal simplex. Dantzig pricing with a Harris ratio test
// on a slightly perturbed right-hand side, Bland's rule after a run of
// degenerate pivots, periodic refactorization; redundant rows are dropped.
class SimplexSolver : public LpSolver {
 public:
  SolveReport solve(const LpProgram& program, double tol = 1e-8) const override;
};

SolveReport solve_lp(const LpProgram& program, double tol = 1e-8);

// Additive-limit program over q_t(x, a) and q_t(x) of an enumerated MDP.
LpProgram build_flat_lp(const FlatMdp& flat);

// Layout of the factored program: pseudo-marginal blocks per factor.
struct FactoredLpLayout {
  // [t-1][i] -> first variable of q_{i,t}(x^pa, a), config-major.
  std::vector<std::vector<int>> dynamics_block;
  // [t-1][j] -> first variable of q_{j,t}(x)
  std::vector<std::vector<int>> singleton_block;
  // [t-1] -> first variable of q_t(a)
  std::vector<int> action_block;
  // (reward, t, first variable)
  struct RewardBlock {
    int reward;
    int t;
    int first;
  };
  std::vector<RewardBlock> reward_blocks;
};

LpProgram build_factored_lp(const FactoredMdp& mdp, FactoredLpLayout* layout = nullptr);

struct ActionSelection {
  int action = 0;
  std::vector<double> objectives;  // per pinned first action
};

ActionSelection lp_action_select(const FactoredMdp& mdp, double tol = 1e-8);

struct FwOptions {
  int max_iters = 500;
  double gap_tol = 1e-5;
  bool barrier_start = true;  // solve_concave only
};

struct FwReport {
  double value = 0.0;  // best objective found (a lower bound on the optimum)
  double gap = 0.0;    // certified: optimum <= value + gap
  int iterations = 0;
  bool converged = false;
  std::vector<double> history;  // best value after each iteration
  std::vector<double> point;    // final iterate
};

struct ConcaveResult : FwReport {
  int barrier_steps = 0;  // Newton steps spent locating the warm start
  // Pseudo-marginals at the final iterate: [t-1][j][x] and [t-1][a].
  std::vector<std::vector<std::vector<double>>> state_beliefs;
  std::vector<std::vector<double>> action_beliefs;
};

// Concave upper bound: maximize the planning objective with the mutual
// information corrections dropped, over the local polytope. A log-barrier
// Newton path supplies the starting point and Frank-Wolfe certifies the gap.
// lambda == 0 solves the factored LP instead (gap 0).
ConcaveResult solve_concave(const FactoredMdp& mdp, double lambda, const FwOptions& opts = {});

struct Determinization {
  int levels = 1024;
  int num_states = 0;
  int num_actions = 0;
  std::vector<int> initial_outcome;  // [gamma] -> x_1
  std::vector<int> outcome;          // [(x * A + a) * K + gamma] -> x'
  double reconstruction_error = 0.0;

  int next(int x, int a, int gamma) const {
    return outcome[(static_cast<std::size_t>(x) * num_actions + a) * levels + gamma];
  }
};

Determinization determinize(const FlatMdp& flat, int levels = 1024);

struct MonteCarloEstimate {
  double estimate = 0.0;
  double standard_error = 0.0;
  int samples = 0;
};

// Sampled determinization in hindsight at lambda = 1.
MonteCarloEstimate hindsight_mc(const FlatMdp& flat, int samples, std::uint64_t seed, int levels = 1024);

// Concave upper bound on determinization in hindsight at lambda = 1.
FwReport det_ub_concave(const FlatMdp& flat, const FwOptions& opts = {}, int levels = 1024);

}  // namespace planference
