#include "planference/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <iomanip>
#include <map>
#include <mutex>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <thread>
#include <tuple>

#include "planference/domains.hpp"
#include "planference/oracle.hpp"
#include "planference/polytope.hpp"

namespace planference {

namespace {

std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Keeps planner draws apart from the per-entity transition streams.
constexpr std::uint64_t kPlannerStream = 1ULL << 40;

// Runs body(i) for i in [0, n) on up to `jobs` threads; the first exception
// is rethrown after all workers finish.
template <class F>
void parallel_for(int n, int jobs, F&& body) {
  jobs = std::max(1, std::min(jobs, n));
  if (jobs == 1) {
    for (int i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (int w = 0; w < jobs; ++w)
    pool.emplace_back([&] {
      for (int i; (i = next.fetch_add(1)) < n;) {
        try {
          body(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

int sample_row(const double* row, int card, double u) {
  double acc = 0.0;
  int last = -1;
  for (int k = 0; k < card; ++k) {
    if (row[k] <= 0.0) continue;
    acc += row[k];
    last = k;
    if (u < acc) return k;
  }
  return last < 0 ? 0 : last;
}

int argmax_first(const std::vector<double>& v) {
  int best = 0;
  for (int k = 1; k < static_cast<int>(v.size()); ++k)
    if (v[k] > v[best]) best = k;
  return best;
}

int initial_index(const FlatMdp& flat) { return argmax_first(flat.initial); }

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

VbpConfig maxent_config(const VbpConfig& base, double alpha) {
  VbpConfig c = base;
  c.family = UpdateFamily::MaxentAdditive;
  c.alpha = alpha;
  return c;
}

}  // namespace

double crn_uniform(std::uint64_t seed, std::uint64_t episode, std::uint64_t step, std::uint64_t stream) {
  std::uint64_t h = mix64(seed);
  h = mix64(h ^ episode);
  h = mix64(h ^ (step * 0xd6e8feb86659fd93ULL));
  h = mix64(h ^ (stream * 0xa0761d6478bd642fULL));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

PlannerAdapter make_planner(Method method, const PlannerOptions& options) {
  PlannerAdapter p;
  p.id = method_name(method);
  const PlannerOptions o = options;
  using Fn = std::function<int(const FlatMdp&, const FactoredMdp&, const DecisionContext&, StepDiagnostics&)>;
  auto over_flat = [o](Fn fn) {
    return [o, fn](const std::vector<int>&, const FactoredMdp& view, const DecisionContext& ctx,
                   StepDiagnostics& diag) {
      if (view.horizon < 2) return 0;
      const FlatMdp flat = flatten(view, o.cap);
      return fn(flat, view, ctx, diag);
    };
  };
  switch (method) {
    case Method::PlanningVi:
      p.decide = over_flat([o](const FlatMdp& flat, const FactoredMdp&, const DecisionContext&, StepDiagnostics&) {
        const OracleResult r = plan_value_iteration(flat, o.lambda);
        const int x = initial_index(flat);
        std::vector<double> pi(flat.num_actions);
        for (int a = 0; a < flat.num_actions; ++a) pi[a] = r.policy->prob(1, x, a);
        return argmax_first(pi);
      });
      break;
    case Method::Map:
      p.decide = over_flat([o](const FlatMdp& flat, const FactoredMdp&, const DecisionContext&, StepDiagnostics&) {
        return map_viterbi(flat, o.lambda).actions.at(0);
      });
      break;
    case Method::Mmap:
      p.decide = over_flat([o](const FlatMdp& flat, const FactoredMdp&, const DecisionContext&, StepDiagnostics&) {
        return mmap_enumerate(flat, o.lambda, o.cap).actions.at(0);
      });
      break;
    case Method::ConformantExhaustive:
      p.decide = over_flat([o](const FlatMdp& flat, const FactoredMdp&, const DecisionContext&, StepDiagnostics&) {
        return conformant_search(flat, o.lambda, o.cap).actions.at(0);
      });
      break;
    case Method::Vbp:
    case Method::MaxentVbp: {
      const VbpConfig cfg = method == Method::Vbp ? o.vbp : maxent_config(o.vbp, o.alpha);
      cfg.check();
      p.decide = [cfg](const std::vector<int>&, const FactoredMdp& view, const DecisionContext&,
                       StepDiagnostics& diag) {
        if (view.horizon < 2) return 0;
        const VbpResult r = vbp_solve(view, cfg);
        diag.iterations = r.iterations;
        diag.converged = r.converged;
        return extract_action(r, 1);
      };
      break;
    }
    case Method::ViLp:
      p.decide = [](const std::vector<int>&, const FactoredMdp& view, const DecisionContext&, StepDiagnostics&) {
        if (view.horizon < 2) return 0;
        return lp_action_select(view).action;
      };
      break;
    case Method::ViCvx:
      p.decide = [o](const std::vector<int>&, const FactoredMdp& view, const DecisionContext&,
                     StepDiagnostics& diag) {
        if (view.horizon < 2) return 0;
        const ConcaveResult r = solve_concave(view, o.lambda);
        diag.iterations = r.iterations;
        diag.converged = r.converged;
        return argmax_first(r.action_beliefs.at(0));
      };
      break;
    case Method::Random:
      p.decide = [](const std::vector<int>&, const FactoredMdp& view, const DecisionContext& ctx,
                    StepDiagnostics&) {
        const double u = crn_uniform(ctx.seed, ctx.episode, ctx.step, kPlannerStream);
        return std::min(view.num_actions - 1, static_cast<int>(u * view.num_actions));
      };
      break;
    default:
      throw std::invalid_argument("method '" + method_name(method) + "' does not choose actions");
  }
  return p;
}

PlannerAdapter with_decision_cache(PlannerAdapter planner) {
  struct Cache {
    std::mutex mutex;
    std::map<std::tuple<std::vector<int>, int, int>, std::pair<int, StepDiagnostics>> entries;
  };
  auto cache = std::make_shared<Cache>();
  auto inner = planner.decide;
  planner.decide = [cache, inner](const std::vector<int>& x, const FactoredMdp& view, const DecisionContext& ctx,
                                  StepDiagnostics& diag) {
    const auto key = std::make_tuple(x, ctx.step, view.horizon);
    {
      std::lock_guard<std::mutex> lock(cache->mutex);
      auto it = cache->entries.find(key);
      if (it != cache->entries.end()) {
        diag.iterations = it->second.second.iterations;
        diag.converged = it->second.second.converged;
        return it->second.first;
      }
    }
    // CapExceeded propagates uncached so every episode is flagged.
    const int a = inner(x, view, ctx, diag);
    std::lock_guard<std::mutex> lock(cache->mutex);
    cache->entries.emplace(key, std::make_pair(a, diag));
    return a;
  };
  return planner;
}

SimulationResult simulate(const FactoredMdp& env, const PlannerAdapter& planner, const EpisodeConfig& config,
                          int lookahead) {
  require_valid(env);
  const int T = config.horizon.value_or(env.horizon);
  if (T < 1 || T > env.horizon)
    throw std::invalid_argument("simulated horizon must lie in [1, " + std::to_string(env.horizon) + "]");
  if (lookahead < 1) throw std::invalid_argument("lookahead must be at least 1");
  if (config.episodes < 0) throw std::invalid_argument("episode count must be non-negative");
  if (!planner.decide) throw std::invalid_argument("planner '" + planner.id + "' has no decision function");

  SimulationResult out;
  out.planner = planner.id;
  out.lookahead = lookahead;
  out.episodes.resize(config.episodes);
  const int ne = env.num_entities();
  std::mutex sink_mutex;

  parallel_for(config.episodes, resolve_jobs(config.jobs), [&](int ep) {
    EpisodeResult& res = out.episodes[ep];
    std::vector<int> x(ne), next(ne);
    for (int j = 0; j < ne; ++j) x[j] = sample_row(env.initial[j].data(), env.card(j), crn_uniform(config.seed, ep, 0, j));
    for (int t = 1; t <= T; ++t) {
      const double r = step_reward(env, t, x);
      res.reward += r;
      TrajectoryStep rec;
      rec.step = t;
      if (config.keep_trajectories) rec.state = x;
      rec.reward = r;
      if (t == T) {
        if (config.keep_trajectories) res.trajectory.push_back(std::move(rec));
        break;
      }
      const int h = std::min(lookahead, T - t + 1);
      StepDiagnostics diag;
      diag.episode = ep;
      diag.step = t;
      int a = 0;
      try {
        const FactoredMdp view = truncated_view(env, x, t, h);
        a = planner.decide(x, view, DecisionContext{config.seed, ep, t}, diag);
      } catch (const CapExceeded&) {
        a = 0;
        res.flagged = true;
      }
      if (a < 0 || a >= env.num_actions)
        throw std::logic_error("planner '" + planner.id + "' returned action " + std::to_string(a));
      diag.action = a;
      if (planner.diagnostics) {
        std::lock_guard<std::mutex> lock(sink_mutex);
        planner.diagnostics(diag);
      }
      rec.action = a;
      if (config.keep_trajectories) res.trajectory.push_back(std::move(rec));
      for (const auto& f : env.dynamics) {
        const std::size_t cfg = parent_config(env, f.parents, x);
        const int c = env.card(f.entity);
        const double* row = &f.cpt[(cfg * env.num_actions + a) * c];
        next[f.entity] = sample_row(row, c, crn_uniform(config.seed, ep, t, f.entity));
      }
      x.swap(next);
    }
  });

  std::vector<double> totals;
  totals.reserve(out.episodes.size());
  for (const auto& e : out.episodes) totals.push_back(e.reward);
  out.mean = mean(totals);
  out.sem = standard_error(totals);
  return out;
}

SimulationResult simulate_best(const FactoredMdp& env, const PlannerAdapter& planner, const EpisodeConfig& config) {
  if (config.lookaheads.empty()) throw std::invalid_argument("no lookahead horizons configured");
  std::optional<SimulationResult> best;
  for (int h : config.lookaheads) {
    SimulationResult r = simulate(env, planner, config, h);
    if (!best || r.mean > best->mean) best = std::move(r);
  }
  return std::move(*best);
}

void write_trajectories(const SimulationResult& result, std::ostream& os) {
  os << "episode,step,state,action,reward\n";
  for (std::size_t ep = 0; ep < result.episodes.size(); ++ep)
    for (const auto& s : result.episodes[ep].trajectory) {
      os << ep << ',' << s.step << ',';
      for (std::size_t j = 0; j < s.state.size(); ++j) os << (j ? " " : "") << s.state[j];
      os << ',' << (s.action ? std::to_string(*s.action) : "") << ',' << format_decimal(s.reward) << '\n';
    }
}

void write_episodes(const SimulationResult& result, std::ostream& os) {
  os << "planner,lookahead,episode,reward,flagged\n";
  for (std::size_t ep = 0; ep < result.episodes.size(); ++ep)
    os << result.planner << ',' << result.lookahead << ',' << ep << ',' << format_decimal(result.episodes[ep].reward)
       << ',' << (result.episodes[ep].flagged ? 1 : 0) << '\n';
}

std::string instance_id(double entropy, int index) {
  std::ostringstream os;
  os << 'h' << std::fixed << std::setprecision(2) << entropy << '-' << std::setw(4) << std::setfill('0') << index;
  return os.str();
}

std::uint64_t instance_seed(std::uint64_t sweep_seed, int bucket, int index) {
  return mix64(mix64(sweep_seed) ^ (static_cast<std::uint64_t>(bucket) << 32 | static_cast<std::uint32_t>(index)));
}

SweepResult evaluate_instance(const FactoredMdp& mdp, const std::string& id, const SweepConfig& config) {
  SweepResult out;
  const double lambda = config.lambda;
  std::optional<FlatMdp> flat;
  std::optional<CapExceeded> too_large;
  try {
    flat = flatten(mdp, config.cap);
  } catch (const CapExceeded& e) {
    too_large = e;
  }
  const double h = normalized_entropy(mdp);

  struct Reference {
    double value;
    std::vector<double> first;
  };
  std::map<double, Reference> refs;
  auto reference = [&](double lam) -> const Reference& {
    auto it = refs.find(lam);
    if (it == refs.end())
      it = refs.emplace(lam, Reference{plan_value_iteration(*flat, lam).value, first_action_values(*flat, lam)}).first;
    return it->second;
  };

  for (Method m : config.methods) {
    ResultRow row;
    row.method = m;
    row.instance = id;
    row.h_mdp = h;
    row.lambda = lambda;
    row.first_action = -1;
    const auto start = std::chrono::steady_clock::now();
    const bool factored = m == Method::Vbp || m == Method::MaxentVbp || m == Method::ViLp || m == Method::ViCvx;
    try {
      if (!flat && !factored) throw *too_large;
      switch (m) {
        case Method::PlanningVi: {
          const OracleResult r = plan_value_iteration(*flat, lambda);
          row.value = r.value;
          std::vector<double> pi(flat->num_actions);
          for (int a = 0; a < flat->num_actions; ++a) pi[a] = r.policy->prob(1, initial_index(*flat), a);
          row.first_action = flat->horizon > 1 ? argmax_first(pi) : 0;
          break;
        }
        case Method::Marginal: row.value = marginal(*flat, lambda).value; break;
        case Method::MarginalU: row.value = marginal_uniform(*flat, lambda).value; break;
        case Method::Map: {
          const OracleResult r = map_viterbi(*flat, lambda);
          row.value = r.value;
          row.first_action = r.actions.empty() ? 0 : r.actions[0];
          break;
        }
        case Method::Mmap:
        case Method::ConformantExhaustive: {
          const OracleResult r =
              m == Method::Mmap ? mmap_enumerate(*flat, lambda, config.cap) : conformant_search(*flat, lambda, config.cap);
          row.value = r.value;
          row.first_action = r.actions.empty() ? 0 : r.actions[0];
          break;
        }
        case Method::Vbp:
        case Method::MaxentVbp: {
          VbpConfig cfg = config.vbp;
          if (m == Method::Vbp) {
            cfg.lambda = lambda;
          } else {
            cfg = maxent_config(cfg, config.alpha);
            row.lambda = 0.0;
          }
          const VbpResult r = vbp_solve(mdp, cfg);
          row.value = r.bound;
          row.first_action = mdp.horizon > 1 ? extract_action(r, 1) : 0;
          row.iterations = r.iterations;
          row.converged = r.converged;
          break;
        }
        case Method::ViLp: {
          row.lambda = 0.0;
          const ActionSelection s = lp_action_select(mdp);
          row.value = *std::max_element(s.objectives.begin(), s.objectives.end());
          row.first_action = s.action;
          break;
        }
        case Method::ViCvx: {
          const ConcaveResult r = solve_concave(mdp, lambda);
          row.value = r.value;
          row.first_action = r.action_beliefs.empty() ? 0 : argmax_first(r.action_beliefs[0]);
          row.iterations = r.iterations;
          row.converged = r.converged;
          break;
        }
        case Method::DetMc:
        case Method::DetUb: {
          if (lambda != 1.0) throw std::invalid_argument("determinization bounds are defined at lambda = 1 only");
          if (m == Method::DetMc) {
            row.value = hindsight_mc(*flat, config.hindsight_samples, fnv1a(id) ^ config.seed).estimate;
          } else {
            const FwReport r = det_ub_concave(*flat);
            row.value = r.value + r.gap;
            row.iterations = r.iterations;
            row.converged = r.converged;
          }
          break;
        }
        case Method::Random: {
          row.value = policy_evaluate(*flat, Policy::uniform(flat->num_states, flat->num_actions, flat->horizon), lambda);
          const double u = crn_uniform(config.seed, fnv1a(id), 1, kPlannerStream);
          row.first_action = std::min(flat->num_actions - 1, static_cast<int>(u * flat->num_actions));
          break;
        }
      }
      if (flat) {
        const Reference& ref = reference(row.lambda);
        row.exact_value = ref.value;
        if (row.first_action >= 0 && mdp.horizon > 1)
          row.advantage = ref.first[row.first_action] - *std::max_element(ref.first.begin(), ref.first.end());
      }
    } catch (const CapExceeded& e) {
      out.failures.push_back({id, method_name(m), e.what(), SweepFailure::Kind::Cap});
      continue;
    } catch (const std::invalid_argument& e) {
      out.failures.push_back({id, method_name(m), e.what(), SweepFailure::Kind::Usage});
      continue;
    } catch (const std::exception& e) {
      out.failures.push_back({id, method_name(m), e.what(), SweepFailure::Kind::Error});
      continue;
    }
    if (config.timings)
      row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    out.rows.push_back(std::move(row));
  }
  return out;
}

SweepResult compare_sweep(const SweepConfig& config) {
  for (Method m : config.methods) method_name(m);
  const int per = config.instances_per_bucket;
  if (per < 0) throw std::invalid_argument("instances per bucket must be non-negative");
  const int buckets = static_cast<int>(config.entropies.size());
  std::vector<SweepResult> parts(static_cast<std::size_t>(buckets) * per);
  parallel_for(buckets * per, resolve_jobs(config.jobs), [&](int k) {
    const int b = k / per, i = k % per;
    const std::string id = instance_id(config.entropies[b], i);
    SyntheticSpec spec;
    spec.target_entropy = config.entropies[b];
    spec.seed = instance_seed(config.seed, b, i);
    try {
      parts[k] = evaluate_instance(generate_synthetic(spec), id, config);
    } catch (const std::exception& e) {
      parts[k].failures.push_back({id, "generate", e.what(), SweepFailure::Kind::Error});
    }
  });
  SweepResult out;
  for (auto& p : parts) {
    out.rows.insert(out.rows.end(), p.rows.begin(), p.rows.end());
    out.failures.insert(out.failures.end(), p.failures.begin(), p.failures.end());
  }
  return out;
}

std::vector<SummaryRow> aggregate(const std::vector<ResultRow>& rows) {
  std::map<Method, int> order;
  for (std::size_t k = 0; k < all_methods().size(); ++k) order[all_methods()[k]] = static_cast<int>(k);
  struct Acc {
    std::vector<double> err, abs_err, adv;
    int count = 0;
  };
  std::map<std::pair<int, long>, Acc> groups;
  for (const auto& r : rows) {
    Acc& g = groups[{order.at(r.method), std::lround(r.h_mdp * 100.0)}];
    ++g.count;
    if (r.exact_value) {
      g.err.push_back(r.value - *r.exact_value);
      g.abs_err.push_back(std::abs(r.value - *r.exact_value));
    }
    if (r.advantage) g.adv.push_back(*r.advantage);
  }
  std::vector<SummaryRow> out;
  for (const auto& [key, g] : groups) {
    SummaryRow s;
    s.method = all_methods()[key.first];
    s.bucket = key.second / 100.0;
    s.count = g.count;
    s.mean_error = mean(g.err);
    s.mean_abs_error = mean(g.abs_err);
    s.sem_abs_error = standard_error(g.abs_err);
    s.mean_advantage = mean(g.adv);
    s.advantage_count = static_cast<int>(g.adv.size());
    int wins = 0;
    for (double a : g.adv) wins += a >= -1e-9;
    s.win_rate = g.adv.empty() ? 0.0 : static_cast<double>(wins) / g.adv.size();
    out.push_back(s);
  }
  return out;
}

void write_summary(const std::vector<SummaryRow>& summary, std::ostream& os) {
  os << "method,bucket,count,mean_error,mean_abs_error,sem_abs_error,mean_advantage,advantage_count,win_rate\n";
  for (const auto& s : summary)
    os << method_name(s.method) << ',' << format_decimal(s.bucket) << ',' << s.count << ','
       << format_decimal(s.mean_error) << ',' << format_decimal(s.mean_abs_error) << ','
       << format_decimal(s.sem_abs_error) << ',' << format_decimal(s.mean_advantage) << ',' << s.advantage_count
       << ',' << format_decimal(s.win_rate) << '\n';
}

Interval bootstrap_paired_mean_difference(const std::vector<double>& a, const std::vector<double>& b, int resamples,
                                          std::uint64_t seed, double level) {
  if (a.size() != b.size() || a.empty()) throw std::invalid_argument("bootstrap needs two non-empty paired samples");
  if (resamples < 1 || !(level > 0.0 && level < 1.0)) throw std::invalid_argument("invalid bootstrap settings");
  const std::size_t n = a.size();
  std::vector<double> d(n);
  for (std::size_t k = 0; k < n; ++k) d[k] = a[k] - b[k];
  std::mt19937_64 rng(seed);
  std::vector<double> means(resamples);
  for (int r = 0; r < resamples; ++r) {
    double s = 0.0;
    for (std::size_t k = 0; k < n; ++k) s += d[rng() % n];
    means[r] = s / n;
  }
  std::sort(means.begin(), means.end());
  auto quantile = [&](double q) {
    const auto k = static_cast<std::size_t>(std::clamp(std::ceil(q * resamples) - 1.0, 0.0, resamples - 1.0));
    return means[k];
  };
  return {mean(d), quantile((1.0 - level) / 2.0), quantile(1.0 - (1.0 - level) / 2.0)};
}

double mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / v.size();
}

double standard_error(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / (v.size() - 1) / v.size());
}

int resolve_jobs(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("PLANFERENCE_JOBS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return static_cast<int>(std::min(v, 256L));
  }
  return 1;
}

}  // namespace planference
