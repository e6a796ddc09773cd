#pragma once

// Hand-rolled instance generators and independent reference computations
// shared by the unit tests and the acceptance binary.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

#include "planference/model.hpp"

namespace testsupport {

using planference::FactoredMdp;
using planference::FlatMdp;

using Rng = std::mt19937_64;

inline double uniform(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }
inline int uniform_int(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

// Random probability vector; `zeros` lets some entries vanish.
inline std::vector<double> random_simplex(Rng& rng, int n, bool zeros = false) {
  std::vector<double> p(n);
  double s = 0.0;
  for (double& x : p) {
    x = uniform(rng) + 1e-3;
    if (zeros && uniform(rng) < 0.3) x = 0.0;
    s += x;
  }
  if (s == 0.0) {
    p[0] = 1.0;
    return p;
  }
  for (double& x : p) x /= s;
  return p;
}

// Probabilities that are multiples of 1/levels, summing exactly to 1.
inline std::vector<double> dyadic_simplex(Rng& rng, int n, int levels) {
  std::vector<int> cuts{0, levels};
  for (int k = 1; k < n; ++k) cuts.push_back(uniform_int(rng, 0, levels));
  std::sort(cuts.begin(), cuts.end());
  std::vector<double> p(n);
  for (int k = 0; k < n; ++k) p[k] = static_cast<double>(cuts[k + 1] - cuts[k]) / levels;
  return p;
}

inline std::vector<double> delta(int n, int at) {
  std::vector<double> p(n, 0.0);
  p[at] = 1.0;
  return p;
}

struct FlatShape {
  int states = 3;
  int actions = 2;
  int horizon = 3;
};

inline FlatShape random_shape(Rng& rng, int max_states = 6, int max_actions = 3, int max_horizon = 5) {
  return {uniform_int(rng, 2, max_states), uniform_int(rng, 1, max_actions), uniform_int(rng, 2, max_horizon)};
}

enum class Dynamics { Stochastic, Deterministic, Dyadic };

// State rewards in [0, 1); stochastic rows are dense.
inline FlatMdp random_flat(Rng& rng, FlatShape s, Dynamics kind = Dynamics::Stochastic) {
  FlatMdp f;
  f.num_states = s.states;
  f.num_actions = s.actions;
  f.horizon = s.horizon;
  const int levels = 1024;
  switch (kind) {
    case Dynamics::Stochastic: f.initial = random_simplex(rng, s.states); break;
    case Dynamics::Deterministic: f.initial = delta(s.states, uniform_int(rng, 0, s.states - 1)); break;
    case Dynamics::Dyadic: f.initial = dyadic_simplex(rng, s.states, levels); break;
  }
  for (int x = 0; x < s.states; ++x)
    for (int a = 0; a < s.actions; ++a) {
      std::vector<double> row;
      switch (kind) {
        case Dynamics::Stochastic: row = random_simplex(rng, s.states); break;
        case Dynamics::Deterministic: row = delta(s.states, uniform_int(rng, 0, s.states - 1)); break;
        case Dynamics::Dyadic: row = dyadic_simplex(rng, s.states, levels); break;
      }
      f.transition.insert(f.transition.end(), row.begin(), row.end());
    }
  f.state_reward.assign(s.horizon, std::vector<double>(s.states));
  for (auto& r : f.state_reward)
    for (double& v : r) v = uniform(rng);
  return f;
}

// Single-entity factored MDP carrying the flat tables.
inline FactoredMdp wrap_flat(const FlatMdp& f) {
  FactoredMdp m;
  m.horizon = f.horizon;
  m.num_actions = f.num_actions;
  m.entities = {{"x", f.num_states}};
  m.initial = {f.initial};
  planference::DynamicsFactor d;
  d.entity = 0;
  d.parents = {0};
  d.cpt = f.transition;
  m.dynamics = {d};
  for (int t = 1; t <= f.horizon; ++t) {
    planference::RewardFactor r;
    r.parents = {0};
    r.table = f.state_reward[t - 1];
    r.active_steps = std::vector<int>{t};
    m.rewards.push_back(r);
  }
  return m;
}

struct FactoredShape {
  int entities = 3;
  int card = 2;
  int actions = 2;
  int horizon = 3;
  int parents = 2;  // ring {i, i+1, ...}
};

inline FactoredMdp random_factored(Rng& rng, FactoredShape s, bool zeros = false) {
  FactoredMdp m;
  m.horizon = s.horizon;
  m.num_actions = s.actions;
  for (int i = 0; i < s.entities; ++i) {
    m.entities.push_back({"e" + std::to_string(i), s.card});
    m.initial.push_back(random_simplex(rng, s.card));
  }
  for (int i = 0; i < s.entities; ++i) {
    planference::DynamicsFactor d;
    d.entity = i;
    for (int k = 0; k < s.parents; ++k) d.parents.push_back((i + k) % s.entities);
    const std::size_t configs = m.config_count(d.parents);
    for (std::size_t c = 0; c < configs * s.actions; ++c) {
      auto row = random_simplex(rng, s.card, zeros);
      d.cpt.insert(d.cpt.end(), row.begin(), row.end());
    }
    m.dynamics.push_back(d);
  }
  // One pairwise reward active everywhere, one single-entity reward at T.
  planference::RewardFactor r1;
  r1.parents = {0, std::min(1, s.entities - 1)};
  if (r1.parents[0] == r1.parents[1]) r1.parents.pop_back();
  r1.table.resize(m.config_count(r1.parents));
  for (double& v : r1.table) v = uniform(rng);
  m.rewards.push_back(r1);
  planference::RewardFactor r2;
  r2.parents = {s.entities - 1};
  r2.table.resize(s.card);
  for (double& v : r2.table) v = uniform(rng);
  r2.active_steps = std::vector<int>{s.horizon};
  m.rewards.push_back(r2);
  return m;
}

inline double lse(const std::vector<double>& v) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : v) m = std::max(m, x);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

// Quantities obtained by explicit enumeration of every (state, action)
// trajectory; lambda > 0.
struct Enumerated {
  double marginal = 0.0;
  double marginal_uniform = 0.0;
  double map = 0.0;
  double mmap = 0.0;
};

inline Enumerated enumerate_trajectories(const FlatMdp& f, double lambda) {
  const int S = f.num_states, A = f.num_actions, T = f.horizon;
  const double ninf = -std::numeric_limits<double>::infinity();
  std::vector<double> all;
  double best = ninf;
  // Per action sequence: log-sum over states.
  std::vector<int> a(T - 1, 0);
  double mmap = ninf;
  while (true) {
    std::vector<double> per_seq;
    std::vector<int> x(T, 0);
    while (true) {
      double lp = std::log(f.initial[x[0]]);
      double r = f.r_state(1, x[0]);
      for (int t = 1; t < T; ++t) {
        lp += std::log(f.p(x[t - 1], a[t - 1], x[t]));
        r += f.r_state(t + 1, x[t]) + f.r_trans(t, x[t - 1], a[t - 1], x[t]);
      }
      const double score = lp + lambda * r;
      if (score != ninf) {
        per_seq.push_back(score);
        all.push_back(score);
        best = std::max(best, score);
      }
      int k = T - 1;
      while (k >= 0 && ++x[k] == S) x[k--] = 0;
      if (k < 0) break;
    }
    mmap = std::max(mmap, lse(per_seq));
    int k = T - 2;
    while (k >= 0 && ++a[k] == A) a[k--] = 0;
    if (k < 0) break;
  }
  Enumerated e;
  e.marginal = lse(all) / lambda;
  e.marginal_uniform = (lse(all) - (T - 1) * std::log(static_cast<double>(A))) / lambda;
  e.map = best / lambda;
  e.mmap = mmap / lambda;
  return e;
}

// Soft value iteration with temperature alpha: V_T = R_T,
// V_t(x) = R_t(x) + alpha log sum_a exp(sum_x' p V_{t+1} / alpha).
inline std::vector<std::vector<double>> soft_value_iteration(const FlatMdp& f, double alpha) {
  const int S = f.num_states, A = f.num_actions, T = f.horizon;
  std::vector<std::vector<double>> v(T, std::vector<double>(S));
  for (int x = 0; x < S; ++x) v[T - 1][x] = f.r_state(T, x);
  for (int t = T - 1; t >= 1; --t)
    for (int x = 0; x < S; ++x) {
      std::vector<double> q(A);
      for (int a = 0; a < A; ++a) {
        double s = 0.0;
        for (int y = 0; y < S; ++y) s += f.p(x, a, y) * v[t][y];
        q[a] = s / alpha;
      }
      v[t - 1][x] = f.r_state(t, x) + alpha * lse(q);
    }
  return v;
}

}  // namespace testsupport
