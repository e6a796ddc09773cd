#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "planference/mdpio.hpp"
#include "planference/model.hpp"
#include "planference/vbp.hpp"

namespace planference {

// Counter-based uniform draw in [0, 1): depends only on the key, never on
// call order, so every planner sees the same outcome at the same
// (episode, step, stream).
double crn_uniform(std::uint64_t seed, std::uint64_t episode, std::uint64_t step, std::uint64_t stream);

struct DecisionContext {
  std::uint64_t seed = 0;
  int episode = 0;
  int step = 1;  // global step of the decision
};

struct StepDiagnostics {
  int episode = 0;
  int step = 1;
  int action = 0;
  long iterations = 0;
  bool converged = true;
};

struct PlannerAdapter {
  std::string id;
  // (current joint state, view of the remaining horizon starting there).
  std::function<int(const std::vector<int>&, const FactoredMdp&, const DecisionContext&, StepDiagnostics&)> decide;
  // Optional sink for per-step diagnostics.
  std::function<void(const StepDiagnostics&)> diagnostics;
};

struct PlannerOptions {
  double lambda = 0.0;
  VbpConfig vbp;
  double alpha = 0.01;  // maxent-vbp
  // Enumeration cap for exact planners; exceeding it is a budget overrun.
  std::size_t cap = 1u << 20;
};

// Planners for methods that choose actions: planning-vi, map, mmap,
// conformant-exhaustive, vbp, maxent-vbp, vi-lp, vi-cvx, random.
PlannerAdapter make_planner(Method method, const PlannerOptions& options);

// Memoizes decisions by (state, step, view horizon). Only valid for planners
// whose choice depends on nothing else, i.e. not random. Thread-safe.
PlannerAdapter with_decision_cache(PlannerAdapter planner);

struct EpisodeConfig {
  int episodes = 30;
  std::vector<int> lookaheads{4, 9};
  // Steps simulated; defaults to the environment's horizon.
  std::optional<int> horizon;
  std::uint64_t seed = 0;
  // Parallel episodes; results do not depend on it.
  int jobs = 1;
  bool keep_trajectories = false;
};

struct TrajectoryStep {
  int step = 1;
  std::vector<int> state;
  std::optional<int> action;  // none at the final step
  double reward = 0.0;
};

struct EpisodeResult {
  double reward = 0.0;
  bool flagged = false;  // planner exceeded its budget at least once
  std::vector<TrajectoryStep> trajectory;
};

struct SimulationResult {
  std::string planner;
  int lookahead = 0;
  std::vector<EpisodeResult> episodes;
  double mean = 0.0;
  double sem = 0.0;
};

SimulationResult simulate(const FactoredMdp& env, const PlannerAdapter& planner, const EpisodeConfig& config,
                          int lookahead);

// Runs every lookahead in the configuration and keeps the best mean (the
// first on ties).
SimulationResult simulate_best(const FactoredMdp& env, const PlannerAdapter& planner, const EpisodeConfig& config);

void write_trajectories(const SimulationResult& result, std::ostream& os);
void write_episodes(const SimulationResult& result, std::ostream& os);

struct SweepConfig {
  std::vector<double> entropies{0.1, 0.3, 0.5, 0.7, 0.9};
  int instances_per_bucket = 10;
  std::vector<Method> methods{Method::PlanningVi, Method::Map, Method::Mmap, Method::Vbp};
  double lambda = 1.0;
  std::uint64_t seed = 0;
  std::size_t cap = 1u << 20;
  VbpConfig vbp;
  double alpha = 0.01;
  int hindsight_samples = 10000;
  int jobs = 1;
  bool timings = false;
};

struct SweepFailure {
  enum class Kind { Usage, Cap, Error };
  std::string instance;
  std::string method;
  std::string message;
  Kind kind = Kind::Error;
};

struct SweepResult {
  std::vector<ResultRow> rows;
  std::vector<SweepFailure> failures;
};

// Instance id of the i-th instance of a bucket, e.g. "h0.50-0007".
std::string instance_id(double entropy, int index);
// Seed of that instance derived from the sweep seed.
std::uint64_t instance_seed(std::uint64_t sweep_seed, int bucket, int index);

// Rows are ordered by bucket, instance, then method order of the config.
SweepResult compare_sweep(const SweepConfig& config);
// Rows for one instance; exposed for the CLI and tests. Methods that fail
// are reported as failures and skipped. When the instance is too large to
// enumerate, factored methods still run and rows carry no exact reference.
SweepResult evaluate_instance(const FactoredMdp& mdp, const std::string& id, const SweepConfig& config);

struct SummaryRow {
  Method method = Method::PlanningVi;
  double bucket = 0.0;
  int count = 0;
  double mean_error = 0.0;      // signed
  double mean_abs_error = 0.0;
  double sem_abs_error = 0.0;
  double mean_advantage = 0.0;
  int advantage_count = 0;
  double win_rate = 0.0;        // fraction of rows whose action is optimal
};

// Groups by (method, H_MDP rounded to 2 decimals); ordered by method
// registry order, then bucket.
std::vector<SummaryRow> aggregate(const std::vector<ResultRow>& rows);
void write_summary(const std::vector<SummaryRow>& summary, std::ostream& os);

struct Interval {
  double estimate = 0.0;
  double lo = 0.0;
  double hi = 0.0;
};

// Percentile bootstrap of mean(a) - mean(b) over paired samples.
Interval bootstrap_paired_mean_difference(const std::vector<double>& a, const std::vector<double>& b,
                                          int resamples, std::uint64_t seed, double level = 0.95);

double mean(const std::vector<double>& v);
double standard_error(const std::vector<double>& v);

// Number of worker threads: explicit request, else PLANFERENCE_JOBS, else 1.
int resolve_jobs(int requested);

}  // namespace planference
