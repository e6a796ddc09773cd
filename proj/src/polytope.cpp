#include "planference/polytope.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

#include "planference/fw.hpp"

namespace planference {

namespace {

std::string nm(const char* prefix, std::initializer_list<long> parts) {
  std::string s = prefix;
  bool first = true;
  for (long p : parts) {
    s += first ? "" : "_";
    s += std::to_string(p);
    first = false;
  }
  return s;
}

}  // namespace

LpProgram build_flat_lp(const FlatMdp& f) {
  const int S = f.num_states, A = f.num_actions, T = f.horizon;
  LpProgram p;
  std::vector<int> qa((T - 1) * S * A), qs(T * S);
  for (int t = 1; t < T; ++t)
    for (int x = 0; x < S; ++x)
      for (int a = 0; a < A; ++a) {
        double c = 0.0;
        if (f.has_transition_reward)
          for (int xn = 0; xn < S; ++xn) c += f.p(x, a, xn) * f.r_trans(t, x, a, xn);
        qa[((t - 1) * S + x) * A + a] = p.add_var(nm("q", {t, x, a}), c);
      }
  for (int t = 1; t <= T; ++t)
    for (int x = 0; x < S; ++x) qs[(t - 1) * S + x] = p.add_var(nm("s", {t, x}), f.r_state(t, x));
  for (int x = 0; x < S; ++x) p.add_row({{qs[x]}, {1.0}, f.initial[x], nm("init", {x})});
  for (int t = 1; t < T; ++t) {
    for (int x = 0; x < S; ++x) {
      LpProgram::Row r;
      r.name = nm("marg", {t, x});
      for (int a = 0; a < A; ++a) {
        r.idx.push_back(qa[((t - 1) * S + x) * A + a]);
        r.val.push_back(1.0);
      }
      r.idx.push_back(qs[(t - 1) * S + x]);
      r.val.push_back(-1.0);
      p.add_row(std::move(r));
    }
    for (int xn = 0; xn < S; ++xn) {
      LpProgram::Row r;
      r.name = nm("flow", {t, xn});
      r.idx.push_back(qs[t * S + xn]);
      r.val.push_back(1.0);
      for (int x = 0; x < S; ++x)
        for (int a = 0; a < A; ++a) {
          double pr = f.p(x, a, xn);
          if (pr == 0.0) continue;
          r.idx.push_back(qa[((t - 1) * S + x) * A + a]);
          r.val.push_back(-pr);
        }
      p.add_row(std::move(r));
    }
  }
  return p;
}

namespace {

// Shared construction of the local polytope. With joint set, dynamics
// blocks range over (x^pa, a, x') restricted to p > 0 and the transition
// constraint ties their child marginal to the next singleton; otherwise
// blocks range over (x^pa, a) and flow is pushed through the dynamics.
struct LocalPolytope {
  LpProgram program;
  FactoredLpLayout layout;
  struct JointEntry {
    int var;
    int cfg;
    int a;
    int child;
    double logp;
  };
  // [t-1][i] -> entries of the joint block
  std::vector<std::vector<std::vector<JointEntry>>> joint;
};

LocalPolytope build_local_polytope(const FactoredMdp& mdp, bool joint) {
  require_valid(mdp);
  const int T = mdp.horizon, A = mdp.num_actions, ne = mdp.num_entities();
  LocalPolytope lp;
  auto& p = lp.program;
  auto& L = lp.layout;
  L.dynamics_block.assign(std::max(T - 1, 0), std::vector<int>(ne, 0));
  L.singleton_block.assign(T, std::vector<int>(ne, 0));
  L.action_block.assign(std::max(T - 1, 0), 0);
  lp.joint.assign(std::max(T - 1, 0), std::vector<std::vector<LocalPolytope::JointEntry>>(ne));

  std::vector<StateIndexer> pa_idx;
  for (const auto& d : mdp.dynamics) {
    std::vector<int> radices;
    for (int q : d.parents) radices.push_back(mdp.card(q));
    pa_idx.emplace_back(radices);
  }
  for (int t = 1; t <= T; ++t)
    for (int j = 0; j < ne; ++j) {
      L.singleton_block[t - 1][j] = p.num_vars();
      for (int x = 0; x < mdp.card(j); ++x) p.add_var(nm("s", {j, t, x}));
    }
  for (int t = 1; t < T; ++t) {
    L.action_block[t - 1] = p.num_vars();
    for (int a = 0; a < A; ++a) p.add_var(nm("u", {t, a}));
    for (int i = 0; i < ne; ++i) {
      const auto& d = mdp.dynamics[i];
      const int C = mdp.card(i);
      L.dynamics_block[t - 1][i] = p.num_vars();
      for (std::size_t cfg = 0; cfg < pa_idx[i].size(); ++cfg)
        for (int a = 0; a < A; ++a) {
          if (!joint) {
            p.add_var(nm("q", {i, t, static_cast<long>(cfg), a}));
            continue;
          }
          for (int x = 0; x < C; ++x) {
            double pr = d.cpt[(cfg * A + a) * C + x];
            if (pr <= 0.0) continue;
            int v = p.add_var(nm("j", {i, t, static_cast<long>(cfg), a, x}));
            lp.joint[t - 1][i].push_back({v, static_cast<int>(cfg), a, x, std::log(pr)});
          }
        }
    }
  }
  for (int t = 1; t <= T; ++t)
    for (std::size_t r = 0; r < mdp.rewards.size(); ++r) {
      const auto& rf = mdp.rewards[r];
      if (!rf.active_at(t)) continue;
      int first = p.num_vars();
      for (std::size_t cfg = 0; cfg < rf.table.size(); ++cfg)
        p.add_var(nm("r", {static_cast<long>(r), t, static_cast<long>(cfg)}), rf.table[cfg]);
      L.reward_blocks.push_back({static_cast<int>(r), t, first});
    }

  // Initial singletons.
  for (int j = 0; j < ne; ++j) {
    const int s0 = L.singleton_block[0][j];
    if (joint) {
      LpProgram::Row r;
      r.name = nm("norm", {j});
      for (int x = 0; x < mdp.card(j); ++x) {
        r.idx.push_back(s0 + x);
        r.val.push_back(1.0);
      }
      r.rhs = 1.0;
      p.add_row(std::move(r));
      for (int x = 0; x < mdp.card(j); ++x)
        if (!(mdp.initial[j][x] > 0.0)) p.add_row({{s0 + x}, {1.0}, 0.0, nm("support", {j, x})});
    } else {
      for (int x = 0; x < mdp.card(j); ++x) p.add_row({{s0 + x}, {1.0}, mdp.initial[j][x], nm("init", {j, x})});
    }
  }

  // Consistency of a block with the singletons of its parents.
  auto tie_parents = [&](const std::vector<int>& parents, int t, const std::string& tag,
                         const std::function<void(std::size_t, std::vector<int>&, std::vector<double>&)>& vars_of_cfg) {
    std::vector<int> radices;
    for (int q : parents) radices.push_back(mdp.card(q));
    StateIndexer idx(radices);
    std::vector<int> digits;
    for (std::size_t k = 0; k < parents.size(); ++k) {
      std::vector<LpProgram::Row> rows(mdp.card(parents[k]));
      for (std::size_t cfg = 0; cfg < idx.size(); ++cfg) {
        idx.decode(cfg, digits);
        vars_of_cfg(cfg, rows[digits[k]].idx, rows[digits[k]].val);
      }
      for (int x = 0; x < mdp.card(parents[k]); ++x) {
        auto& r = rows[x];
        r.idx.push_back(L.singleton_block[t - 1][parents[k]] + x);
        r.val.push_back(-1.0);
        r.name = tag + "_p" + std::to_string(k) + "_" + std::to_string(x);
        p.add_row(std::move(r));
      }
    }
  };

  for (int t = 1; t < T; ++t)
    for (int i = 0; i < ne; ++i) {
      const auto& d = mdp.dynamics[i];
      const int C = mdp.card(i);
      const int base = L.dynamics_block[t - 1][i];
      const std::string tag = nm("dyn", {i, t});
      // Group joint entries by (cfg, a) for quick lookup.
      std::vector<std::vector<int>> by_cfg_a;
      if (joint) {
        by_cfg_a.assign(pa_idx[i].size() * A, {});
        for (const auto& e : lp.joint[t - 1][i]) by_cfg_a[static_cast<std::size_t>(e.cfg) * A + e.a].push_back(e.var);
      }
      tie_parents(d.parents, t, tag, [&](std::size_t cfg, std::vector<int>& idx, std::vector<double>& val) {
        for (int a = 0; a < A; ++a) {
          if (joint) {
            for (int v : by_cfg_a[cfg * A + a]) {
              idx.push_back(v);
              val.push_back(1.0);
            }
          } else {
            idx.push_back(base + static_cast<int>(cfg) * A + a);
            val.push_back(1.0);
          }
        }
      });
      // Action marginal.
      for (int a = 0; a < A; ++a) {
        LpProgram::Row r;
        r.name = tag + "_a" + std::to_string(a);
        for (std::size_t cfg = 0; cfg < pa_idx[i].size(); ++cfg) {
          if (joint) {
            for (int v : by_cfg_a[cfg * A + a]) {
              r.idx.push_back(v);
              r.val.push_back(1.0);
            }
          } else {
            r.idx.push_back(base + static_cast<int>(cfg) * A + a);
            r.val.push_back(1.0);
          }
        }
        r.idx.push_back(L.action_block[t - 1] + a);
        r.val.push_back(-1.0);
        p.add_row(std::move(r));
      }
      // Transition to the child singleton.
      for (int x = 0; x < C; ++x) {
        LpProgram::Row r;
        r.name = tag + "_c" + std::to_string(x);
        r.idx.push_back(L.singleton_block[t][i] + x);
        r.val.push_back(1.0);
        if (joint) {
          for (const auto& e : lp.joint[t - 1][i])
            if (e.child == x) {
              r.idx.push_back(e.var);
              r.val.push_back(-1.0);
            }
        } else {
          for (std::size_t cfg = 0; cfg < pa_idx[i].size(); ++cfg)
            for (int a = 0; a < A; ++a) {
              double pr = d.cpt[(cfg * A + a) * C + x];
              if (pr == 0.0) continue;
              r.idx.push_back(base + static_cast<int>(cfg) * A + a);
              r.val.push_back(-pr);
            }
        }
        p.add_row(std::move(r));
      }
    }
  for (const auto& rb : L.reward_blocks) {
    const auto& rf = mdp.rewards[rb.reward];
    tie_parents(rf.parents, rb.t, nm("rew", {rb.reward, rb.t}),
                [&](std::size_t cfg, std::vector<int>& idx, std::vector<double>& val) {
                  idx.push_back(rb.first + static_cast<int>(cfg));
                  val.push_back(1.0);
                });
  }
  return lp;
}

}  // namespace

LpProgram build_factored_lp(const FactoredMdp& mdp, FactoredLpLayout* layout) {
  auto lp = build_local_polytope(mdp, false);
  if (layout) *layout = lp.layout;
  return std::move(lp.program);
}

ActionSelection lp_action_select(const FactoredMdp& mdp, double tol) {
  FactoredLpLayout layout;
  LpProgram base = build_factored_lp(mdp, &layout);
  ActionSelection out;
  const int A = mdp.num_actions;
  if (mdp.horizon < 2) {
    auto rep = solve_lp(base, tol);
    out.objectives.assign(A, rep.objective);
    return out;
  }
  for (int a = 0; a < A; ++a) {
    LpProgram p = base;
    p.add_row({{layout.action_block[0] + a}, {1.0}, 1.0, "pin_first_action"});
    auto rep = solve_lp(p, tol);
    if (rep.status != LpStatus::Optimal)
      throw std::runtime_error("LP with first action " + std::to_string(a) + " pinned: " + lp_status_name(rep.status));
    out.objectives.push_back(rep.objective);
  }
  for (int a = 1; a < A; ++a)
    if (out.objectives[a] > out.objectives[out.action] + tol) out.action = a;
  return out;
}

namespace {

// Curvature of the concave objective: entries with a -1/x diagonal and
// groups whose entries J carry sum_k J_k log(sum J / J_k).
struct BarrierTerms {
  std::vector<int> diagonal;
  std::vector<std::vector<int>> groups;
};

// Follows the log-barrier central path of the concave program restricted to
// the face containing x (the coordinates where x > 0), updating x in place.
// Returns the number of Newton steps taken.
int barrier_path(const LpProgram& program, const std::function<double(const std::vector<double>&)>& value,
                 const std::function<void(const std::vector<double>&, std::vector<double>&)>& gradient,
                 const BarrierTerms& terms, std::vector<double>& x) {
  const int n = program.num_vars();
  std::vector<int> pos(n, -1), free;
  for (int k = 0; k < n; ++k)
    if (x[k] > 0.0) {
      pos[k] = static_cast<int>(free.size());
      free.push_back(k);
    }
  const int nf = static_cast<int>(free.size());
  if (nf == 0) return 0;
  Eigen::MatrixXd full = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(program.rows.size()), nf);
  for (std::size_t r = 0; r < program.rows.size(); ++r)
    for (std::size_t k = 0; k < program.rows[r].idx.size(); ++k) {
      const int c = pos[program.rows[r].idx[k]];
      if (c >= 0) full(static_cast<Eigen::Index>(r), c) += program.rows[r].val[k];
    }
  // Keep a maximal independent subset of the rows.
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> rank_qr(full.transpose());
  const Eigen::Index mr = rank_qr.rank();
  Eigen::MatrixXd a(mr, nf);
  for (Eigen::Index r = 0; r < mr; ++r) a.row(r) = full.row(rank_qr.colsPermutation().indices()[r]);

  // Newton steps in coordinates scaled by the current iterate, from the KKT
  // system of the equality-constrained barrier problem.
  auto phi = [&](const std::vector<double>& v, double mu) {
    double s = value(v);
    for (int k : free) s += mu * std::log(v[k]);
    return s;
  };
  std::vector<double> g(n), trial(n);
  Eigen::VectorXd dx(nf);
  Eigen::MatrixXd h(nf, nf), kkt(nf + mr, nf + mr);
  Eigen::VectorXd rhs(nf + mr);
  int steps = 0;
  for (double mu = 1e-1; mu >= 1e-11; mu *= 0.1) {
    for (int it = 0; it < 100; ++it) {
      gradient(x, g);
      h.setZero();
      for (int c = 0; c < nf; ++c) h(c, c) = -mu / (x[free[c]] * x[free[c]]);
      for (int v : terms.diagonal)
        if (pos[v] >= 0) h(pos[v], pos[v]) -= 1.0 / x[v];
      for (const auto& grp : terms.groups) {
        if (grp.empty() || pos[grp.front()] < 0) continue;
        double m = 0.0;
        for (int v : grp) m += x[v];
        for (int v : grp) {
          h(pos[v], pos[v]) -= 1.0 / x[v];
          for (int w : grp) h(pos[v], pos[w]) += 1.0 / m;
        }
      }
      // Scale: y = x / x_current.
      kkt.setZero();
      for (int c = 0; c < nf; ++c) {
        const double dc = x[free[c]];
        for (int e = 0; e < nf; ++e) kkt(c, e) = -h(c, e) * dc * x[free[e]];
        rhs[c] = (g[free[c]] + mu / dc) * dc;
        for (Eigen::Index r = 0; r < mr; ++r) kkt(nf + r, c) = a(r, c) * dc;
      }
      // Rows whose entries are all tiny would otherwise look dependent.
      for (Eigen::Index r = 0; r < mr; ++r) {
        const double norm = kkt.row(nf + r).head(nf).norm();
        if (norm > 0.0) kkt.row(nf + r).head(nf) /= norm;
      }
      kkt.topRightCorner(nf, mr) = kkt.bottomLeftCorner(mr, nf).transpose();
      rhs.tail(mr).setZero();
      const Eigen::VectorXd sol = kkt.partialPivLu().solve(rhs);
      const Eigen::VectorXd dy = sol.head(nf);
      const double decrement = rhs.head(nf).dot(dy);
      if (!(decrement > 1e-13) || !dy.allFinite()) break;
      for (int c = 0; c < nf; ++c) dx[c] = dy[c] * x[free[c]];
      double step = 1.0;
      for (int c = 0; c < nf; ++c)
        if (dy[c] < 0.0) step = std::min(step, -0.99 / dy[c]);
      const double base = phi(x, mu);
      bool accepted = false;
      for (int b = 0; b < 60; ++b, step *= 0.5) {
        trial = x;
        for (int c = 0; c < nf; ++c) trial[free[c]] += step * dx[c];
        if (phi(trial, mu) >= base + 0.25 * step * decrement) {
          accepted = true;
          break;
        }
      }
      ++steps;
      if (!accepted) break;
      x.swap(trial);
    }
  }
  return steps;
}

}  // namespace

ConcaveResult solve_concave(const FactoredMdp& mdp, double lambda, const FwOptions& opts) {
  if (lambda < 0.0) throw std::invalid_argument("lambda must be non-negative");
  if (lambda == 0.0) {
    auto rep = solve_lp(build_factored_lp(mdp));
    if (rep.status != LpStatus::Optimal) throw std::runtime_error("factored LP: " + lp_status_name(rep.status));
    ConcaveResult out;
    out.value = rep.objective;
    out.converged = true;
    out.history.push_back(rep.objective);
    out.point = rep.x;
    return out;
  }
  LocalPolytope lp = build_local_polytope(mdp, true);
  const int n = lp.program.num_vars();
  const int T = mdp.horizon, A = mdp.num_actions, ne = mdp.num_entities();
  const auto& L = lp.layout;

  std::vector<double> reward_coef(n, 0.0);
  for (const auto& rb : L.reward_blocks) {
    const auto& table = mdp.rewards[rb.reward].table;
    for (std::size_t c = 0; c < table.size(); ++c) reward_coef[rb.first + c] = lambda * table[c];
  }

  // (cfg, a) groups of each joint block, for the conditional normalizers.
  struct Group {
    std::vector<int> vars;
    std::vector<double> logp;
  };
  std::vector<Group> groups;
  for (int t = 1; t < T; ++t)
    for (int i = 0; i < ne; ++i) {
      const auto& entries = lp.joint[t - 1][i];
      std::size_t k = 0;
      while (k < entries.size()) {
        Group g;
        const int cfg = entries[k].cfg, a = entries[k].a;
        while (k < entries.size() && entries[k].cfg == cfg && entries[k].a == a) {
          g.vars.push_back(entries[k].var);
          g.logp.push_back(entries[k].logp);
          ++k;
        }
        groups.push_back(std::move(g));
      }
    }
  std::vector<std::pair<int, double>> init_terms;  // (var, log P)
  for (int j = 0; j < ne; ++j)
    for (int x = 0; x < mdp.card(j); ++x)
      if (mdp.initial[j][x] > 0.0) init_terms.push_back({L.singleton_block[0][j] + x, std::log(mdp.initial[j][x])});

  constexpr double kLogFloor = -700.0;
  auto safe_log = [&](double v) { return v > 0.0 ? std::max(std::log(v), kLogFloor) : kLogFloor; };

  FwObjective obj;
  obj.value = [&](const std::vector<double>& x) {
    double f = 0.0;
    for (int k = 0; k < n; ++k) f += reward_coef[k] * x[k];
    for (const auto& [v, lP] : init_terms)
      if (x[v] > 0.0) f += x[v] * (lP - std::log(x[v]));
    for (const auto& g : groups) {
      double m = 0.0;
      for (int v : g.vars) m += std::max(x[v], 0.0);
      if (m <= 0.0) continue;
      const double lm = std::log(m);
      for (std::size_t k = 0; k < g.vars.size(); ++k) {
        double j = x[g.vars[k]];
        if (j > 0.0) f += j * (g.logp[k] - std::log(j) + lm);
      }
    }
    return f;
  };
  obj.gradient = [&](const std::vector<double>& x, std::vector<double>& g) {
    g = reward_coef;
    for (const auto& [v, lP] : init_terms) g[v] = lP - safe_log(x[v]) - 1.0;
    for (const auto& grp : groups) {
      double m = 0.0;
      for (int v : grp.vars) m += std::max(x[v], 0.0);
      for (std::size_t k = 0; k < grp.vars.size(); ++k) {
        const int v = grp.vars[k];
        g[v] = m > 0.0 ? grp.logp[k] - safe_log(x[v]) + std::log(m) : 0.0;
      }
    }
  };
  LpProgram lmo_program = lp.program;
  obj.lmo = [&](const std::vector<double>& g) {
    lmo_program.objective = g;
    auto rep = solve_lp(lmo_program);
    if (rep.status != LpStatus::Optimal)
      throw std::runtime_error("local polytope LP oracle: " + lp_status_name(rep.status));
    return rep.x;
  };

  // Interior start: product parents, uniform actions, true dynamics.
  std::vector<double> x0(n, 0.0);
  std::vector<std::vector<std::vector<double>>> single(T);
  for (int j = 0; j < ne; ++j) {
    single[0].push_back(mdp.initial[j]);
    for (int x = 0; x < mdp.card(j); ++x) x0[L.singleton_block[0][j] + x] = mdp.initial[j][x];
  }
  auto product = [&](const std::vector<int>& parents, int t, std::size_t cfg) {
    std::vector<int> radices;
    for (int q : parents) radices.push_back(mdp.card(q));
    auto digits = StateIndexer(radices).decode(cfg);
    double w = 1.0;
    for (std::size_t k = 0; k < parents.size(); ++k) w *= single[t - 1][parents[k]][digits[k]];
    return w;
  };
  for (int t = 1; t < T; ++t) {
    for (int a = 0; a < A; ++a) x0[L.action_block[t - 1] + a] = 1.0 / A;
    single[t].assign(ne, {});
    for (int i = 0; i < ne; ++i) {
      single[t][i].assign(mdp.card(i), 0.0);
      for (const auto& e : lp.joint[t - 1][i]) {
        double v = product(mdp.dynamics[i].parents, t, e.cfg) / A * std::exp(e.logp);
        x0[e.var] = v;
        single[t][i][e.child] += v;
      }
      for (int x = 0; x < mdp.card(i); ++x) x0[L.singleton_block[t][i] + x] = single[t][i][x];
    }
  }
  for (const auto& rb : L.reward_blocks) {
    const auto& rf = mdp.rewards[rb.reward];
    for (std::size_t c = 0; c < rf.table.size(); ++c) x0[rb.first + c] = product(rf.parents, rb.t, c);
  }

  ConcaveResult out;
  if (opts.barrier_start) {
    BarrierTerms terms;
    for (const auto& [v, lP] : init_terms) terms.diagonal.push_back(v);
    for (const auto& g : groups) terms.groups.push_back(g.vars);
    out.barrier_steps = barrier_path(lp.program, obj.value, obj.gradient, terms, x0);
  }
  static_cast<FwReport&>(out) = pairwise_frank_wolfe(obj, x0, opts);
  out.value /= lambda;
  out.gap /= lambda;
  for (double& h : out.history) h /= lambda;
  const auto& x = out.point;
  out.state_beliefs.assign(T, {});
  for (int t = 1; t <= T; ++t)
    for (int j = 0; j < ne; ++j)
      out.state_beliefs[t - 1].emplace_back(x.begin() + L.singleton_block[t - 1][j],
                                             x.begin() + L.singleton_block[t - 1][j] + mdp.card(j));
  for (int t = 1; t < T; ++t)
    out.action_beliefs.emplace_back(x.begin() + L.action_block[t - 1], x.begin() + L.action_block[t - 1] + A);
  return out;
}

}  // namespace planference
