#include "planference/vbp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <stdexcept>

#include "planference/mdpio.hpp"
#include "planference/oracle.hpp"

namespace planference {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double lse(const std::vector<double>& v) { return log_sum_exp(v); }

void normalize_log(std::vector<double>& v) {
  double z = lse(v);
  if (!std::isfinite(z)) return;
  for (double& x : v) x -= z;
}

double entropy(const std::vector<double>& p) {
  double h = 0.0;
  for (double x : p)
    if (x > 0.0) h -= x * std::log(x);
  return h;
}

std::vector<double> softmax(const std::vector<double>& logits) {
  std::vector<double> out(logits.size());
  double z = lse(logits);
  for (std::size_t k = 0; k < logits.size(); ++k) out[k] = std::exp(logits[k] - z);
  return out;
}

}  // namespace

int PlanningFactorGraph::num_dynamics_factors() const {
  return static_cast<int>(std::count_if(factors.begin(), factors.end(),
                                        [](const GraphFactor& f) { return f.kind == GraphFactor::Kind::Dynamics; }));
}

int PlanningFactorGraph::num_reward_factors() const {
  return static_cast<int>(factors.size()) - num_dynamics_factors();
}

PlanningFactorGraph build_graph(const FactoredMdp& mdp) {
  require_valid(mdp);
  PlanningFactorGraph g;
  g.horizon = mdp.horizon;
  g.num_actions = mdp.num_actions;
  g.num_entities = mdp.num_entities();
  for (int i = 0; i < g.num_entities; ++i) g.cards.push_back(mdp.card(i));
  g.slice_factors.resize(g.horizon);
  g.variable_links.resize(g.num_variables());

  auto add = [&](GraphFactor::Kind kind, int source, int t, const std::vector<int>& parents) {
    GraphFactor f;
    f.kind = kind;
    f.source = source;
    f.t = t;
    f.parents = parents;
    for (int p : parents) f.cards.push_back(mdp.card(p));
    StateIndexer idx(f.cards);
    f.num_configs = idx.size();
    f.digits.resize(f.num_configs * parents.size());
    std::vector<int> d;
    for (std::size_t c = 0; c < f.num_configs; ++c) {
      idx.decode(c, d);
      std::copy(d.begin(), d.end(), f.digits.begin() + c * parents.size());
    }
    int id = static_cast<int>(g.factors.size());
    for (std::size_t k = 0; k < parents.size(); ++k)
      g.variable_links[g.var_id(t, parents[k])].push_back({id, static_cast<int>(k)});
    g.slice_factors[t - 1].push_back(id);
    g.factors.push_back(std::move(f));
  };

  for (int t = 1; t <= g.horizon; ++t) {
    if (t < g.horizon)
      for (int i = 0; i < g.num_entities; ++i) add(GraphFactor::Kind::Dynamics, i, t, mdp.dynamics[i].parents);
    for (std::size_t r = 0; r < mdp.rewards.size(); ++r)
      if (mdp.rewards[r].active_at(t)) add(GraphFactor::Kind::Reward, static_cast<int>(r), t, mdp.rewards[r].parents);
  }
  return g;
}

double EpsilonSchedule::at(int k) const {
  if (kind == Kind::Constant) return value;
  int step = (std::max(k, 1) + every - 1) / every;
  return std::max(floor, 1.0 / step);
}

VbpConfig VbpConfig::ippc_preset() {
  VbpConfig c;
  c.damping = 0.1;
  c.max_outer = 150000;
  c.epsilon = EpsilonSchedule::inverse_iter(0.01, 300);
  return c;
}

void VbpConfig::check() const {
  if (!(damping >= 0.0 && damping < 1.0)) throw std::invalid_argument("damping must lie in [0, 1)");
  if (max_outer < 1 || inner_cap < 1) throw std::invalid_argument("iteration caps must be positive");
  if (!(tolerance > 0.0)) throw std::invalid_argument("tolerance must be positive");
  switch (family) {
    case UpdateFamily::Smoothed: {
      if (!(lambda > 0.0))
        throw std::invalid_argument("smoothed VBP needs lambda > 0; use the maxent-additive family for lambda = 0");
      double lo = epsilon.kind == EpsilonSchedule::Kind::Constant ? epsilon.value : epsilon.floor;
      if (!(lo > 0.0)) throw std::invalid_argument("epsilon must stay positive");
      break;
    }
    case UpdateFamily::MaxentRescaled:
      if (!(lambda > 0.0) || !(alpha > 0.0)) throw std::invalid_argument("maxent-rescaled VBP needs lambda > 0 and alpha > 0");
      if (alpha * lambda > 1.0) throw std::invalid_argument("maxent-rescaled VBP needs alpha * lambda <= 1");
      break;
    case UpdateFamily::MaxentAdditive:
      if (!(alpha > 0.0)) throw std::invalid_argument("maxent-additive VBP needs alpha > 0");
      break;
  }
}

VbpEngine::VbpEngine(const FactoredMdp& mdp, VbpConfig config)
    : mdp_(mdp), config_(config), graph_(build_graph(mdp)) {
  config_.check();
  for (const auto& d : mdp.dynamics) {
    std::vector<double> lp(d.cpt.size());
    for (std::size_t k = 0; k < lp.size(); ++k) lp[k] = d.cpt[k] > 0.0 ? std::log(d.cpt[k]) : kNegInf;
    logp_.push_back(std::move(lp));
  }
  init_messages();
}

double VbpEngine::weight() const {
  switch (config_.family) {
    case UpdateFamily::Smoothed: return 1.0;
    case UpdateFamily::MaxentRescaled: return config_.lambda;
    case UpdateFamily::MaxentAdditive: return 0.0;
  }
  return 1.0;
}

double VbpEngine::temperature(double eps) const {
  return config_.family == UpdateFamily::Smoothed ? eps : config_.alpha;
}

double VbpEngine::clampf(double v) {
  if (std::isnan(v) || v == kNegInf) {
    ++state_.nonfinite;
    return config_.floor;
  }
  return v;
}

void VbpEngine::init_messages() {
  const int A = graph_.num_actions;
  state_ = MessageState{};
  current_eps_ = config_.family == UpdateFamily::Smoothed ? config_.epsilon.at(1) : config_.alpha * config_.lambda;
  const double rscale = config_.family == UpdateFamily::Smoothed ? config_.lambda : 1.0;
  for (const auto& f : graph_.factors) {
    FactorMessages m;
    m.lmb_pa.assign(f.num_configs, 0.0);
    m.lmf_pa.assign(f.num_configs, 0.0);
    for (int c : f.cards) {
      m.lnf.emplace_back(c, 0.0);
      m.lnb.emplace_back(c, 0.0);
    }
    if (f.kind == GraphFactor::Kind::Reward) {
      const auto& table = mdp_.rewards[f.source].table;
      for (std::size_t c = 0; c < f.num_configs; ++c) m.lmb_pa[c] = rscale * table[c];
    } else {
      m.lq.assign(f.num_configs * A, 0.0);
      m.lm_act.assign(A, 0.0);
      m.ln_act.assign(A, 0.0);
    }
    state_.factors.push_back(std::move(m));
  }
  for (int t = 1; t <= graph_.horizon; ++t)
    for (int j = 0; j < graph_.num_entities; ++j) {
      std::vector<double> mf(graph_.cards[j], 0.0);
      if (t == 1)
        for (int x = 0; x < graph_.cards[j]; ++x) mf[x] = clampf(std::log(mdp_.initial[j][x]));
      state_.lmf_var.push_back(std::move(mf));
      state_.lmb_var.emplace_back(graph_.cards[j], 0.0);
    }
}

double VbpEngine::update_timeslice(int t, double eps) {
  const int A = graph_.num_actions;
  const double tau = temperature(eps);
  const double kappa = weight();
  const double d = config_.damping;
  const bool additive = config_.family == UpdateFamily::MaxentAdditive;
  current_eps_ = eps;
  double res = 0.0;

  auto assign = [&](double& slot, double v) {
    res = std::max(res, std::abs(v - slot));
    slot = v;
  };
  auto damped = [&](double& slot, double computed) { assign(slot, d * slot + (1.0 - d) * clampf(computed)); };

  const auto& ids = graph_.slice_factors[t - 1];
  std::vector<int> dyn;
  for (int id : ids)
    if (graph_.factors[id].kind == GraphFactor::Kind::Dynamics) dyn.push_back(id);

  std::vector<double> terms;
  for (int id : dyn) {
    const auto& f = graph_.factors[id];
    auto& m = state_.factors[id];
    const int i = f.source;
    const int C = graph_.cards[i];
    const auto& lp = logp_[i];
    const auto& lmb_child = state_.lmb_var[graph_.var_id(t + 1, i)];

    // Q
    for (std::size_t cfg = 0; cfg < f.num_configs; ++cfg)
      for (int a = 0; a < A; ++a) {
        const double* row = &lp[(cfg * A + a) * C];
        double q;
        if (additive) {
          q = 0.0;
          for (int x = 0; x < C; ++x)
            if (row[x] != kNegInf) q += std::exp(row[x]) * lmb_child[x];
        } else {
          terms.assign(C, 0.0);
          for (int x = 0; x < C; ++x) terms[x] = kappa * lmb_child[x] + row[x];
          q = lse(terms) / kappa;
        }
        assign(m.lq[cfg * A + a], clampf(q));
      }
    // m_b over parents
    terms.resize(A);
    for (std::size_t cfg = 0; cfg < f.num_configs; ++cfg) {
      for (int a = 0; a < A; ++a) terms[a] = (m.lq[cfg * A + a] + m.ln_act[a]) / tau;
      assign(m.lmb_pa[cfg], clampf(tau * lse(terms)));
    }
    // m^(i)(a)
    terms.resize(f.num_configs);
    std::vector<double> next(A);
    for (int a = 0; a < A; ++a) {
      for (std::size_t cfg = 0; cfg < f.num_configs; ++cfg)
        terms[cfg] = (m.lq[cfg * A + a] - m.lmb_pa[cfg]) / tau + m.lmf_pa[cfg] + kappa * m.lmb_pa[cfg];
      next[a] = d * m.lm_act[a] + (1.0 - d) * clampf(tau * lse(terms));
    }
    normalize_log(next);
    for (int a = 0; a < A; ++a) assign(m.lm_act[a], next[a]);
  }
  // n^(i)(a)
  for (int id : dyn) {
    auto& m = state_.factors[id];
    for (int a = 0; a < A; ++a) {
      double s = 0.0;
      for (int other : dyn)
        if (other != id) s += state_.factors[other].lm_act[a];
      assign(m.ln_act[a], s);
    }
  }
  // m_f towards the child
  for (int id : dyn) {
    const auto& f = graph_.factors[id];
    const auto& m = state_.factors[id];
    const int i = f.source;
    const int C = graph_.cards[i];
    const auto& lp = logp_[i];
    auto& out = state_.lmf_var[graph_.var_id(t + 1, i)];
    std::vector<double> computed(C);
    std::vector<double> base(f.num_configs * A);
    for (std::size_t cfg = 0; cfg < f.num_configs; ++cfg)
      for (int a = 0; a < A; ++a) {
        double lq = m.lq[cfg * A + a];
        base[cfg * A + a] = (lq + m.ln_act[a] - m.lmb_pa[cfg]) / tau + m.lmf_pa[cfg] + kappa * m.lmb_pa[cfg] - kappa * lq;
      }
    terms.resize(base.size());
    for (int x = 0; x < C; ++x) {
      for (std::size_t k = 0; k < base.size(); ++k) terms[k] = base[k] + lp[k * C + x];
      computed[x] = clampf(lse(terms));
    }
    std::vector<double> next(C);
    for (int x = 0; x < C; ++x) next[x] = d * out[x] + (1.0 - d) * computed[x];
    normalize_log(next);
    for (int x = 0; x < C; ++x) assign(out[x], next[x]);
  }
  // m_f over parents, for every factor of the slice
  for (int id : ids) {
    const auto& f = graph_.factors[id];
    auto& m = state_.factors[id];
    for (std::size_t cfg = 0; cfg < f.num_configs; ++cfg) {
      double s = 0.0;
      for (std::size_t k = 0; k < f.parents.size(); ++k) s += m.lnf[k][f.digit(cfg, k)];
      assign(m.lmf_pa[cfg], s);
    }
  }
  // n_f: variable -> factor
  for (int id : ids) {
    const auto& f = graph_.factors[id];
    auto& m = state_.factors[id];
    for (std::size_t k = 0; k < f.parents.size(); ++k) {
      const int v = graph_.var_id(t, f.parents[k]);
      std::vector<double> next = state_.lmf_var[v];
      if (kappa != 0.0)
        for (const auto& link : graph_.variable_links[v]) {
          if (link.factor == id) continue;
          const auto& nb = state_.factors[link.factor].lnb[link.position];
          for (std::size_t x = 0; x < next.size(); ++x) next[x] += kappa * nb[x];
        }
      normalize_log(next);
      for (std::size_t x = 0; x < next.size(); ++x) assign(m.lnf[k][x], next[x]);
    }
  }
  // n_b: factor -> variable
  for (int id : ids) {
    const auto& f = graph_.factors[id];
    auto& m = state_.factors[id];
    const std::size_t np = f.parents.size();
    for (std::size_t k = 0; k < np; ++k) {
      const int card = f.cards[k];
      std::vector<std::vector<double>> buckets(card);
      std::vector<double> acc(card, 0.0);
      for (std::size_t cfg = 0; cfg < f.num_configs; ++cfg) {
        double s = 0.0;
        for (std::size_t k2 = 0; k2 < np; ++k2)
          if (k2 != k) s += m.lnf[k2][f.digit(cfg, k2)];
        int x = f.digit(cfg, k);
        if (additive)
          acc[x] += m.lmb_pa[cfg] * std::exp(s);
        else
          buckets[x].push_back(kappa * m.lmb_pa[cfg] + s);
      }
      for (int x = 0; x < card; ++x) damped(m.lnb[k][x], additive ? acc[x] : lse(buckets[x]) / kappa);
    }
  }
  // m_b into each variable of the slice
  for (int j = 0; j < graph_.num_entities; ++j) {
    const int v = graph_.var_id(t, j);
    auto& out = state_.lmb_var[v];
    for (std::size_t x = 0; x < out.size(); ++x) {
      double s = 0.0;
      for (const auto& link : graph_.variable_links[v]) s += state_.factors[link.factor].lnb[link.position][x];
      assign(out[x], s);
    }
  }
  return res;
}

double VbpEngine::solve_timeslice(int t, double eps) {
  double worst = 0.0;
  for (int it = 0; it < config_.inner_cap; ++it) {
    double r = update_timeslice(t, eps);
    worst = std::max(worst, r);
    if (r < config_.tolerance) break;
  }
  return worst;
}

VbpResult VbpEngine::run(const std::function<void(const DiagnosticsRow&)>& diagnostics) {
  const int T = graph_.horizon;
  bool converged = false;
  int k = 0;
  double res = 0.0;
  double prev_eps = -1.0;
  for (k = 1; k <= config_.max_outer; ++k) {
    double eps = config_.family == UpdateFamily::Smoothed ? config_.epsilon.at(k) : config_.alpha * config_.lambda;
    res = 0.0;
    for (int t = T; t >= 1; --t) res = std::max(res, solve_timeslice(t, eps));
    for (int t = 1; t <= T; ++t) res = std::max(res, solve_timeslice(t, eps));
    if (diagnostics) diagnostics({k, eps, res, evaluate_bound()});
    if (res < config_.tolerance && eps == prev_eps) {
      converged = true;
      break;
    }
    prev_eps = eps;
  }
  VbpResult out = snapshot();
  out.converged = converged;
  out.iterations = std::min(k, config_.max_outer);
  out.residual = res;
  return out;
}

void VbpEngine::compute_beliefs(double eps, VbpResult& out) const {
  const int A = graph_.num_actions;
  const double tau = temperature(eps);
  const double kappa = weight();
  out.factor_beliefs.clear();
  for (std::size_t id = 0; id < graph_.factors.size(); ++id) {
    const auto& f = graph_.factors[id];
    const auto& m = state_.factors[id];
    FactorBelief b;
    std::vector<double> logits(f.num_configs);
    for (std::size_t cfg = 0; cfg < f.num_configs; ++cfg) logits[cfg] = m.lmf_pa[cfg] + kappa * m.lmb_pa[cfg];
    b.q_pa = softmax(logits);
    if (f.kind == GraphFactor::Kind::Dynamics) {
      b.q_pa_a.assign(f.num_configs * A, 0.0);
      std::vector<double> la(A);
      for (std::size_t cfg = 0; cfg < f.num_configs; ++cfg) {
        for (int a = 0; a < A; ++a) la[a] = (m.lq[cfg * A + a] + m.ln_act[a] - m.lmb_pa[cfg]) / tau;
        auto pa = softmax(la);
        for (int a = 0; a < A; ++a) b.q_pa_a[cfg * A + a] = b.q_pa[cfg] * pa[a];
      }
    }
    out.factor_beliefs.push_back(std::move(b));
  }
  out.variable_beliefs.clear();
  for (int t = 1; t <= graph_.horizon; ++t)
    for (int j = 0; j < graph_.num_entities; ++j) {
      const int v = graph_.var_id(t, j);
      std::vector<double> logits(graph_.cards[j]);
      for (int x = 0; x < graph_.cards[j]; ++x) {
        logits[x] = state_.lmf_var[v][x] + kappa * state_.lmb_var[v][x];
        if (t == 1 && !(mdp_.initial[j][x] > 0.0)) logits[x] = kNegInf;
      }
      out.variable_beliefs.push_back(softmax(logits));
    }
  out.action_beliefs.clear();
  for (int t = 1; t < graph_.horizon; ++t) {
    std::vector<double> score(A, 0.0);
    for (int i = 0; i < graph_.num_entities; ++i) {
      const auto& m = state_.factors[graph_.dynamics_factor(t, i)];
      for (int a = 0; a < A; ++a) score[a] += m.lm_act[a];
    }
    double scale = 1.0;
    if (config_.family == UpdateFamily::MaxentRescaled) scale = config_.lambda;
    if (config_.family == UpdateFamily::MaxentAdditive) scale = 1.0 / config_.alpha;
    for (double& s : score) s *= scale;
    out.action_beliefs.push_back(softmax(score));
  }
}

double VbpEngine::evaluate_bound() const {
  VbpResult b;
  compute_beliefs(current_eps_, b);
  const int A = graph_.num_actions;
  const double kappa = weight();
  double expected_reward = 0.0;
  for (std::size_t id = 0; id < graph_.factors.size(); ++id) {
    const auto& f = graph_.factors[id];
    if (f.kind != GraphFactor::Kind::Reward) continue;
    const auto& table = mdp_.rewards[f.source].table;
    for (std::size_t cfg = 0; cfg < f.num_configs; ++cfg) expected_reward += b.factor_beliefs[id].q_pa[cfg] * table[cfg];
  }
  if (config_.family == UpdateFamily::MaxentAdditive) return expected_reward;

  const double lambda = config_.lambda;
  double total = lambda * expected_reward;
  // Initial state terms: <log P> + H.
  for (int j = 0; j < graph_.num_entities; ++j) {
    const auto& q = b.variable_beliefs[graph_.var_id(1, j)];
    for (std::size_t x = 0; x < q.size(); ++x) {
      if (q[x] <= 0.0) continue;
      double p = mdp_.initial[j][x];
      if (!(p > 0.0)) return kNegInf;
      total += q[x] * (std::log(p) - std::log(q[x]));
    }
  }
  // Conditional dynamics terms: <log p> + H(x'|pa,a).
  std::vector<double> lc;
  for (std::size_t id = 0; id < graph_.factors.size(); ++id) {
    const auto& f = graph_.factors[id];
    if (f.kind != GraphFactor::Kind::Dynamics) continue;
    const int i = f.source;
    const int C = graph_.cards[i];
    const auto& lp = logp_[i];
    const auto& lmb_child = state_.lmb_var[graph_.var_id(f.t + 1, i)];
    lc.resize(C);
    for (std::size_t cfg = 0; cfg < f.num_configs; ++cfg)
      for (int a = 0; a < A; ++a) {
        double w = b.factor_beliefs[id].q_pa_a[cfg * A + a];
        if (w <= 0.0) continue;
        const double* row = &lp[(cfg * A + a) * C];
        for (int x = 0; x < C; ++x) lc[x] = row[x] + kappa * lmb_child[x];
        double z = lse(lc);
        double kl = 0.0;
        for (int x = 0; x < C; ++x) {
          if (row[x] == kNegInf) continue;
          double lq = lc[x] - z;
          kl += std::exp(lq) * (lq - row[x]);
        }
        total -= w * kl;
      }
  }
  // Mutual information among the parents of every factor.
  for (std::size_t id = 0; id < graph_.factors.size(); ++id) {
    const auto& f = graph_.factors[id];
    if (f.parents.size() < 2) continue;
    const auto& q = b.factor_beliefs[id].q_pa;
    double info = -entropy(q);
    for (std::size_t k = 0; k < f.parents.size(); ++k) {
      std::vector<double> marg(f.cards[k], 0.0);
      for (std::size_t cfg = 0; cfg < f.num_configs; ++cfg) marg[f.digit(cfg, k)] += q[cfg];
      info += entropy(marg);
    }
    total -= info;
  }
  return total / lambda;
}

VbpResult VbpEngine::snapshot() const {
  VbpResult out;
  compute_beliefs(current_eps_, out);
  out.bound = evaluate_bound();
  out.nonfinite = state_.nonfinite;
  return out;
}

VbpResult vbp_solve(const FactoredMdp& mdp, const VbpConfig& config,
                    const std::function<void(const DiagnosticsRow&)>& diagnostics) {
  VbpEngine engine(mdp, config);
  return engine.run(diagnostics);
}

int extract_action(const VbpResult& result, int t) {
  if (t < 1 || t > static_cast<int>(result.action_beliefs.size()))
    throw std::out_of_range("no action belief at step " + std::to_string(t));
  const auto& b = result.action_beliefs[t - 1];
  int best = 0;
  for (int a = 1; a < static_cast<int>(b.size()); ++a)
    if (b[a] > b[best]) best = a;
  return best;
}

void write_diagnostics_header(std::ostream& os) { os << "iteration,epsilon,residual,bound\n"; }

void write_diagnostics_row(std::ostream& os, const DiagnosticsRow& row) {
  os << row.iteration << ',' << format_decimal(row.epsilon) << ',' << format_decimal(row.residual) << ','
     << format_decimal(row.bound) << '\n';
}

}  // namespace planference
