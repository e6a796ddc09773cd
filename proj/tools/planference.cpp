#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "planference/domains.hpp"
#include "planference/harness.hpp"
#include "planference/mdpio.hpp"

using namespace planference;
namespace fs = std::filesystem;

namespace {

enum Exit { kOk = 0, kUsage = 2, kCap = 3, kIo = 4 };

struct SolverFlags {
  double lambda = 0.3;
  double alpha = 0.01;
  double damping = 0.5;
  std::string eps_schedule = "inverse-iter";
  double eps = 1.0;
  double eps_floor = 0.01;
  int anneal_every = 1;
  int max_outer = 1000;
  double tolerance = 1e-8;
  bool ippc = false;
  std::size_t cap = 1u << 20;
  int jobs = 0;

  void attach(CLI::App* app) {
    app->add_option("--lambda", lambda, "Risk parameter lambda (>= 0)")->capture_default_str();
    app->add_option("--alpha", alpha, "Policy temperature of maxent-vbp")->capture_default_str();
    auto* d = app->add_option("--damping", damping, "VBP message damping in [0, 1)")->capture_default_str();
    app->add_option("--eps-schedule", eps_schedule, "VBP epsilon schedule")
        ->check(CLI::IsMember({"inverse-iter", "constant"}))
        ->capture_default_str();
    app->add_option("--eps", eps, "Epsilon for the constant schedule")->capture_default_str();
    app->add_option("--eps-floor", eps_floor, "Lower clamp of the inverse-iter schedule")->capture_default_str();
    auto* a = app->add_option("--anneal-every", anneal_every, "Outer iterations per inverse-iter step")
                  ->check(CLI::PositiveNumber)
                  ->capture_default_str();
    auto* m = app->add_option("--max-outer", max_outer, "VBP outer iteration cap")
                  ->check(CLI::PositiveNumber)
                  ->capture_default_str();
    app->add_option("--tolerance", tolerance, "VBP convergence tolerance")->capture_default_str();
    app->add_flag("--ippc-preset", ippc, "Damping 0.1, 150000 outer iterations, anneal every 300")
        ->excludes(d)
        ->excludes(a)
        ->excludes(m);
    app->add_option("--cap", cap, "Enumeration cap of exact oracles")->capture_default_str();
    app->add_option("--jobs", jobs, "Worker threads (0: PLANFERENCE_JOBS or 1)")->capture_default_str();
  }

  VbpConfig vbp() const {
    VbpConfig c;
    if (ippc) {
      c = VbpConfig::ippc_preset();
    } else {
      c.damping = damping;
      c.max_outer = max_outer;
      c.epsilon = EpsilonSchedule::inverse_iter(eps_floor, anneal_every);
    }
    if (eps_schedule == "constant") c.epsilon = EpsilonSchedule::constant(eps);
    c.epsilon.floor = eps_floor;
    c.lambda = lambda;
    c.tolerance = tolerance;
    return c;
  }
};

std::vector<Method> parse_methods(const std::vector<std::string>& names) {
  std::vector<Method> out;
  for (const auto& n : names) out.push_back(parse_method(n));
  return out;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path, path);
  return os;
}

void close_out(std::ofstream& os, const std::string& path) {
  os.close();
  if (!os) throw IoError("write failed for " + path, path);
}

int report_failures(const std::vector<SweepFailure>& failures) {
  int code = kOk;
  for (const auto& f : failures) {
    std::cerr << "error: " << f.instance << " / " << f.method << ": " << f.message << '\n';
    code = std::max(code, f.kind == SweepFailure::Kind::Usage ? int(kUsage) : int(kCap));
  }
  return code;
}

struct GenerateArgs {
  std::vector<double> targets{0.1, 0.3, 0.5, 0.7, 0.9};
  int count = 10;
  std::uint64_t seed = 0;
  std::string out;
  SyntheticSpec shape;
};

int cmd_generate(const GenerateArgs& g) {
  fs::create_directories(g.out);
  const std::string manifest = (fs::path(g.out) / "manifest.csv").string();
  std::ofstream man = open_out(manifest);
  man << "instance,target,seed,achieved_entropy,exponent,file\n";
  for (std::size_t b = 0; b < g.targets.size(); ++b)
    for (int i = 0; i < g.count; ++i) {
      SyntheticSpec spec = g.shape;
      spec.target_entropy = g.targets[b];
      spec.seed = instance_seed(g.seed, static_cast<int>(b), i);
      const SyntheticInstance inst = generate_synthetic_instance(spec);
      const std::string id = instance_id(g.targets[b], i);
      const std::string file = id + ".json";
      save_mdp(inst.mdp, (fs::path(g.out) / file).string());
      man << id << ',' << format_decimal(g.targets[b]) << ',' << spec.seed << ',' << format_decimal(inst.achieved_entropy)
          << ',' << format_decimal(inst.exponent) << ',' << file << '\n';
    }
  close_out(man, manifest);
  return kOk;
}

struct SolveArgs {
  std::string input;
  std::vector<std::string> methods{"planning-vi"};
  std::string output;
  std::string diagnostics;
  bool timings = false;
  bool lenient = false;
};

int cmd_solve(const SolveArgs& s, const SolverFlags& f) {
  const FactoredMdp mdp = load_mdp(s.input, !s.lenient);
  SweepConfig cfg;
  cfg.methods = parse_methods(s.methods);
  cfg.lambda = f.lambda;
  cfg.alpha = f.alpha;
  cfg.vbp = f.vbp();
  cfg.cap = f.cap;
  cfg.timings = s.timings;
  const std::string id = fs::path(s.input).stem().string();
  const SweepResult res = evaluate_instance(mdp, id, cfg);
  write_results(res.rows, std::cout);
  if (!s.output.empty()) write_results(res.rows, s.output);
  if (!s.diagnostics.empty()) {
    std::ofstream os = open_out(s.diagnostics);
    os << "method,";
    write_diagnostics_header(os);
    for (Method m : cfg.methods) {
      if (m != Method::Vbp && m != Method::MaxentVbp) continue;
      VbpConfig c = cfg.vbp;
      if (m == Method::MaxentVbp) {
        c.family = UpdateFamily::MaxentAdditive;
        c.alpha = cfg.alpha;
      }
      try {
        vbp_solve(mdp, c, [&](const DiagnosticsRow& row) {
          os << method_name(m) << ',';
          write_diagnostics_row(os, row);
        });
      } catch (const std::invalid_argument&) {
        // Already reported through the failure list.
      }
    }
    close_out(os, s.diagnostics);
  }
  for (const auto& r : res.rows)
    if (!r.converged) std::cerr << "warning: " << method_name(r.method) << " did not converge\n";
  return report_failures(res.failures);
}

struct CompareArgs {
  std::vector<double> targets{0.1, 0.3, 0.5, 0.7, 0.9};
  int count = 10;
  std::vector<std::string> methods{"planning-vi", "map", "mmap", "vbp"};
  std::uint64_t seed = 0;
  int hindsight_samples = 10000;
  std::string out;
  std::string summary;
  std::string failures;
  bool timings = false;
};

int cmd_compare(const CompareArgs& c, const SolverFlags& f) {
  SweepConfig cfg;
  cfg.entropies = c.targets;
  cfg.instances_per_bucket = c.count;
  cfg.methods = parse_methods(c.methods);
  cfg.lambda = f.lambda;
  cfg.alpha = f.alpha;
  cfg.vbp = f.vbp();
  cfg.cap = f.cap;
  cfg.seed = c.seed;
  cfg.hindsight_samples = c.hindsight_samples;
  cfg.jobs = resolve_jobs(f.jobs);
  cfg.timings = c.timings;
  const SweepResult res = compare_sweep(cfg);
  write_results(res.rows, c.out);
  const std::string summary = c.summary.empty() ? (fs::path(c.out).replace_extension(".summary.csv")).string() : c.summary;
  std::ofstream os = open_out(summary);
  write_summary(aggregate(res.rows), os);
  close_out(os, summary);
  if (!c.failures.empty()) {
    std::ofstream fo = open_out(c.failures);
    fo << "instance,method,message\n";
    for (const auto& x : res.failures) {
      std::string msg = x.message;
      for (char& ch : msg)
        if (ch == ',' || ch == '\n') ch = ' ';
      fo << x.instance << ',' << x.method << ',' << msg << '\n';
    }
    close_out(fo, c.failures);
  }
  for (const auto& x : res.failures) std::cerr << "warning: " << x.instance << " / " << x.method << ": " << x.message << '\n';
  std::cout << res.rows.size() << " rows, " << res.failures.size() << " failures\n";
  return kOk;
}

struct SimulateArgs {
  std::string env = "reactivity";
  std::string mdp;
  std::vector<std::string> methods{"planning-vi"};
  std::vector<int> lookaheads{4, 9};
  int episodes = 30;
  int horizon = 0;
  std::uint64_t seed = 0;
  std::string out;
  std::string trajectories;
};

int cmd_simulate(const SimulateArgs& s, const SolverFlags& f) {
  const FactoredMdp env = s.mdp.empty() ? build_reactivity_env() : load_mdp(s.mdp);
  EpisodeConfig ec;
  ec.episodes = s.episodes;
  ec.lookaheads = s.lookaheads;
  if (s.horizon > 0) ec.horizon = s.horizon;
  ec.seed = s.seed;
  ec.jobs = resolve_jobs(f.jobs);
  ec.keep_trajectories = !s.trajectories.empty();
  PlannerOptions po;
  po.lambda = f.lambda;
  po.vbp = f.vbp();
  po.alpha = f.alpha;
  po.cap = f.cap;

  std::ostringstream episodes, traj;
  episodes << "planner,lookahead,episode,reward,flagged\n";
  std::cout << "planner,lookahead,episodes,mean,sem,flagged\n";
  for (Method m : parse_methods(s.methods)) {
    PlannerAdapter p = make_planner(m, po);
    if (m != Method::Random) p = with_decision_cache(std::move(p));
    const SimulationResult r = simulate_best(env, p, ec);
    int flagged = 0;
    for (const auto& e : r.episodes) flagged += e.flagged;
    std::cout << r.planner << ',' << r.lookahead << ',' << r.episodes.size() << ',' << format_decimal(r.mean) << ','
              << format_decimal(r.sem) << ',' << flagged << '\n';
    std::ostringstream one;
    write_episodes(r, one);
    episodes << one.str().substr(one.str().find('\n') + 1);
    if (ec.keep_trajectories) {
      std::ostringstream t;
      write_trajectories(r, t);
      std::string body = t.str().substr(t.str().find('\n') + 1);
      std::istringstream lines(body);
      for (std::string line; std::getline(lines, line);) traj << r.planner << ',' << line << '\n';
    }
  }
  if (!s.out.empty()) {
    std::ofstream os = open_out(s.out);
    os << episodes.str();
    close_out(os, s.out);
  }
  if (!s.trajectories.empty()) {
    std::ofstream os = open_out(s.trajectories);
    os << "planner,episode,step,state,action,reward\n" << traj.str();
    close_out(os, s.trajectories);
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Planning as variational inference on factored MDPs"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Help for every subcommand");

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "Write controlled-entropy synthetic instances and a manifest");
  g->add_option("--targets", gen.targets, "Target normalized entropies in (0, 1)")->delimiter(',')->capture_default_str();
  g->add_option("--count", gen.count, "Instances per target")->check(CLI::NonNegativeNumber)->capture_default_str();
  g->add_option("--seed", gen.seed, "Master seed")->capture_default_str();
  g->add_option("--out", gen.out, "Output directory")->required();
  g->add_option("--entities", gen.shape.num_entities, "Entities")->capture_default_str();
  g->add_option("--states", gen.shape.num_states, "States per entity")->capture_default_str();
  g->add_option("--actions", gen.shape.num_actions, "Actions")->capture_default_str();
  g->add_option("--horizon", gen.shape.horizon, "Horizon")->capture_default_str();
  g->add_option("--parents", gen.shape.parents_per_entity, "Parents per entity")->capture_default_str();

  SolverFlags solve_flags, compare_flags, simulate_flags;
  compare_flags.lambda = 1.0;

  SolveArgs sa;
  auto* s = app.add_subcommand("solve", "Run methods on one MDP document; rows go to standard output");
  s->add_option("input", sa.input, "MDP document")->required();
  s->add_option("--method", sa.methods, "Methods, comma separated")->delimiter(',')->capture_default_str();
  s->add_option("--output", sa.output, "Also write the rows to this CSV");
  s->add_option("--diagnostics", sa.diagnostics, "Per-iteration VBP diagnostics CSV");
  s->add_flag("--timings", sa.timings, "Fill the wall_ms column");
  s->add_flag("--lenient", sa.lenient, "Accept unknown keys in the document");
  solve_flags.attach(s);

  CompareArgs ca;
  auto* c = app.add_subcommand("compare", "Entropy sweep over synthetic instances against exact oracles");
  c->add_option("--targets", ca.targets, "Entropy buckets")->delimiter(',')->capture_default_str();
  c->add_option("--count", ca.count, "Instances per bucket")->check(CLI::NonNegativeNumber)->capture_default_str();
  c->add_option("--methods", ca.methods, "Methods, comma separated")->delimiter(',')->capture_default_str();
  c->add_option("--seed", ca.seed, "Master seed")->capture_default_str();
  c->add_option("--hindsight-samples", ca.hindsight_samples, "Samples of det-mc")->capture_default_str();
  c->add_option("--out", ca.out, "Results CSV")->required();
  c->add_option("--summary", ca.summary, "Summary CSV (default: <out>.summary.csv)");
  c->add_option("--failures", ca.failures, "Failure list CSV");
  c->add_flag("--timings", ca.timings, "Fill the wall_ms column");
  compare_flags.attach(c);

  SimulateArgs sm;
  auto* m = app.add_subcommand("simulate", "Episodic simulation with replanning and common random numbers");
  auto* env_opt = m->add_option("--env", sm.env, "Built-in environment")
                      ->check(CLI::IsMember({"reactivity"}))
                      ->capture_default_str();
  m->add_option("--mdp", sm.mdp, "MDP document to simulate instead of a built-in environment")->excludes(env_opt);
  m->add_option("--method", sm.methods, "Planners, comma separated")->delimiter(',')->capture_default_str();
  m->add_option("--lookahead", sm.lookaheads, "Lookahead horizons; the best mean is kept")
      ->delimiter(',')
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  m->add_option("--episodes", sm.episodes, "Episodes")->check(CLI::NonNegativeNumber)->capture_default_str();
  m->add_option("--horizon", sm.horizon, "Steps per episode (0: the environment's horizon)")->capture_default_str();
  m->add_option("--seed", sm.seed, "Master seed")->capture_default_str();
  m->add_option("--out", sm.out, "Per-episode CSV");
  m->add_option("--trajectories", sm.trajectories, "Per-step trajectory CSV");
  simulate_flags.attach(m);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*g) return cmd_generate(gen);
    if (*s) return cmd_solve(sa, solve_flags);
    if (*c) return cmd_compare(ca, compare_flags);
    if (*m) return cmd_simulate(sm, simulate_flags);
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kIo;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kIo;
  } catch (const CapExceeded& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kCap;
  } catch (const UnreachableTarget& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kCap;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return kOk;
}
