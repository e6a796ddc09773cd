#include "planference/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

namespace planference {

bool RewardFactor::active_at(int t) const {
  if (!active_steps) return true;
  return std::find(active_steps->begin(), active_steps->end(), t) != active_steps->end();
}

std::size_t FactoredMdp::config_count(const std::vector<int>& vars) const {
  std::size_t n = 1;
  for (int v : vars) n *= static_cast<std::size_t>(card(v));
  return n;
}

StateIndexer::StateIndexer(std::vector<int> radices) : radices_(std::move(radices)) {
  strides_.assign(radices_.size(), 1);
  size_ = 1;
  for (std::size_t k = radices_.size(); k-- > 0;) {
    strides_[k] = size_;
    size_ *= static_cast<std::size_t>(radices_[k]);
  }
}

std::size_t StateIndexer::encode(const std::vector<int>& digits) const {
  std::size_t idx = 0;
  for (std::size_t k = 0; k < radices_.size(); ++k) idx += strides_[k] * digits[k];
  return idx;
}

std::vector<int> StateIndexer::decode(std::size_t index) const {
  std::vector<int> out;
  decode(index, out);
  return out;
}

void StateIndexer::decode(std::size_t index, std::vector<int>& out) const {
  out.resize(radices_.size());
  for (std::size_t k = 0; k < radices_.size(); ++k) {
    out[k] = static_cast<int>(index / strides_[k]);
    index %= strides_[k];
  }
}

double FlatMdp::r_state(int t, int x) const {
  if (state_reward.empty()) return 0.0;
  return state_reward[t - 1][x];
}

double FlatMdp::r_trans(int t, int x, int a, int xn) const {
  if (!has_transition_reward || transition_reward.empty()) return 0.0;
  return transition_reward[t - 1][tindex(x, a, xn)];
}

namespace {

void check_distribution(const std::vector<double>& v, std::size_t offset, std::size_t len,
                        const std::string& where, std::vector<Violation>& out) {
  double sum = 0.0;
  for (std::size_t k = 0; k < len; ++k) {
    double p = v[offset + k];
    if (!(p >= 0.0) || !std::isfinite(p)) {
      out.push_back({where, "negative or non-finite probability", std::isfinite(p) ? -p : INFINITY});
      return;
    }
    sum += p;
  }
  if (std::abs(sum - 1.0) > kProbTol) out.push_back({where, "row does not sum to 1", std::abs(sum - 1.0)});
}

bool parents_valid(const std::vector<int>& parents, int ne, const std::string& where,
                   std::vector<Violation>& out) {
  bool ok = true;
  std::set<int> seen;
  for (int p : parents) {
    if (p < 0 || p >= ne) {
      out.push_back({where, "parent index " + std::to_string(p) + " out of range", static_cast<double>(p)});
      ok = false;
    } else if (!seen.insert(p).second) {
      out.push_back({where, "duplicate parent " + std::to_string(p), 0.0});
      ok = false;
    }
  }
  return ok;
}

}  // namespace

std::vector<Violation> validate(const FactoredMdp& mdp) {
  std::vector<Violation> out;
  const int ne = mdp.num_entities();
  if (mdp.horizon < 1) out.push_back({"horizon", "must be positive", static_cast<double>(mdp.horizon)});
  if (mdp.num_actions < 1) out.push_back({"num_actions", "must be positive", static_cast<double>(mdp.num_actions)});
  if (ne < 1) out.push_back({"entities", "at least one entity required", 0.0});
  bool cards_ok = true;
  for (int i = 0; i < ne; ++i) {
    if (mdp.entities[i].cardinality < 2) {
      out.push_back({"entities[" + std::to_string(i) + "]", "cardinality below 2",
                     static_cast<double>(mdp.entities[i].cardinality)});
      cards_ok = false;
    }
  }
  if (!cards_ok) return out;

  if (static_cast<int>(mdp.initial.size()) != ne) {
    out.push_back({"initial", "expected one vector per entity",
                   static_cast<double>(mdp.initial.size())});
  } else {
    for (int i = 0; i < ne; ++i) {
      std::string where = "initial[" + std::to_string(i) + "]";
      if (static_cast<int>(mdp.initial[i].size()) != mdp.card(i)) {
        out.push_back({where, "length differs from cardinality", static_cast<double>(mdp.initial[i].size())});
        continue;
      }
      check_distribution(mdp.initial[i], 0, mdp.initial[i].size(), where, out);
    }
  }

  if (static_cast<int>(mdp.dynamics.size()) != ne)
    out.push_back({"dynamics", "expected exactly one factor per entity", static_cast<double>(mdp.dynamics.size())});
  for (std::size_t f = 0; f < mdp.dynamics.size(); ++f) {
    const auto& d = mdp.dynamics[f];
    std::string where = "dynamics[" + std::to_string(f) + "]";
    if (d.entity != static_cast<int>(f)) {
      out.push_back({where, "entity index must equal factor position", static_cast<double>(d.entity)});
      continue;
    }
    if (!parents_valid(d.parents, ne, where, out)) continue;
    const std::size_t npa = mdp.config_count(d.parents);
    const std::size_t nc = mdp.card(d.entity);
    const std::size_t expect = npa * mdp.num_actions * nc;
    if (d.cpt.size() != expect) {
      out.push_back({where, "cpt length " + std::to_string(d.cpt.size()) + " expected " + std::to_string(expect),
                     static_cast<double>(d.cpt.size())});
      continue;
    }
    for (std::size_t row = 0; row < npa * mdp.num_actions; ++row) {
      std::ostringstream w;
      w << where << " row " << row << " (parent config " << row / mdp.num_actions << ", action "
        << row % mdp.num_actions << ")";
      check_distribution(d.cpt, row * nc, nc, w.str(), out);
    }
  }

  for (std::size_t r = 0; r < mdp.rewards.size(); ++r) {
    const auto& rf = mdp.rewards[r];
    std::string where = "rewards[" + std::to_string(r) + "]";
    if (!parents_valid(rf.parents, ne, where, out)) continue;
    const std::size_t n = mdp.config_count(rf.parents);
    if (rf.table.size() != n)
      out.push_back({where, "table length " + std::to_string(rf.table.size()) + " expected " + std::to_string(n),
                     static_cast<double>(rf.table.size())});
    for (double v : rf.table)
      if (!std::isfinite(v)) {
        out.push_back({where, "non-finite reward", INFINITY});
        break;
      }
    if (rf.active_steps)
      for (int t : *rf.active_steps)
        if (t < 1 || t > mdp.horizon)
          out.push_back({where, "active step " + std::to_string(t) + " outside 1..T", static_cast<double>(t)});
  }
  return out;
}

std::vector<Violation> validate(const FlatMdp& flat) {
  std::vector<Violation> out;
  const std::size_t s = flat.num_states;
  if (flat.initial.size() != s) {
    out.push_back({"initial", "length differs from state count", static_cast<double>(flat.initial.size())});
  } else {
    check_distribution(flat.initial, 0, s, "initial", out);
  }
  if (flat.transition.size() != s * flat.num_actions * s) {
    out.push_back({"transition", "wrong tensor size", static_cast<double>(flat.transition.size())});
    return out;
  }
  for (std::size_t row = 0; row < s * flat.num_actions; ++row)
    check_distribution(flat.transition, row * s, s, "transition row " + std::to_string(row), out);
  if (!flat.state_reward.empty() && static_cast<int>(flat.state_reward.size()) != flat.horizon)
    out.push_back({"state_reward", "expected one table per step", static_cast<double>(flat.state_reward.size())});
  if (flat.has_transition_reward && static_cast<int>(flat.transition_reward.size()) != flat.horizon - 1)
    out.push_back({"transition_reward", "expected one table per transition",
                   static_cast<double>(flat.transition_reward.size())});
  return out;
}

void require_valid(const FactoredMdp& mdp) {
  auto v = validate(mdp);
  if (v.empty()) return;
  std::ostringstream os;
  os << "invalid MDP (" << v.size() << " violation" << (v.size() > 1 ? "s" : "") << "):";
  for (std::size_t k = 0; k < v.size() && k < 5; ++k)
    os << "\n  " << v[k].where << ": " << v[k].what << " (" << v[k].magnitude << ")";
  throw std::invalid_argument(os.str());
}

std::size_t parent_config(const FactoredMdp& mdp, const std::vector<int>& parents,
                          const std::vector<int>& state) {
  std::size_t idx = 0;
  for (int p : parents) idx = idx * mdp.card(p) + state[p];
  return idx;
}

double transition_prob(const FactoredMdp& mdp, int entity, std::size_t pa_cfg, int action, int child) {
  const auto& d = mdp.dynamics[entity];
  return d.cpt[(pa_cfg * mdp.num_actions + action) * mdp.card(entity) + child];
}

double step_reward(const FactoredMdp& mdp, int t, const std::vector<int>& state) {
  double r = 0.0;
  for (const auto& rf : mdp.rewards)
    if (rf.active_at(t)) r += rf.table[parent_config(mdp, rf.parents, state)];
  return r;
}

FlatMdp flatten(const FactoredMdp& mdp, std::size_t cap) {
  std::vector<int> radices;
  double required = 1.0;
  for (const auto& e : mdp.entities) {
    radices.push_back(e.cardinality);
    required *= e.cardinality;
  }
  if (required > static_cast<double>(cap))
    throw CapExceeded("flat state space of " + std::to_string(static_cast<long double>(required)) +
                          " states exceeds cap " + std::to_string(cap),
                      required, static_cast<double>(cap));
  StateIndexer idx(radices);
  const int ne = mdp.num_entities();
  const int na = mdp.num_actions;
  FlatMdp flat;
  flat.num_states = static_cast<int>(idx.size());
  flat.num_actions = na;
  flat.horizon = mdp.horizon;
  const std::size_t s = idx.size();

  std::vector<std::vector<int>> states(s);
  for (std::size_t x = 0; x < s; ++x) idx.decode(x, states[x]);

  flat.initial.assign(s, 1.0);
  for (std::size_t x = 0; x < s; ++x)
    for (int i = 0; i < ne; ++i) flat.initial[x] *= mdp.initial[i][states[x][i]];

  flat.transition.assign(s * na * s, 0.0);
  std::vector<std::size_t> pa(ne);
  for (std::size_t x = 0; x < s; ++x) {
    for (int i = 0; i < ne; ++i) pa[i] = parent_config(mdp, mdp.dynamics[i].parents, states[x]);
    for (int a = 0; a < na; ++a) {
      for (std::size_t xn = 0; xn < s; ++xn) {
        double prob = 1.0;
        for (int i = 0; i < ne && prob != 0.0; ++i) prob *= transition_prob(mdp, i, pa[i], a, states[xn][i]);
        flat.transition[flat.tindex(static_cast<int>(x), a, static_cast<int>(xn))] = prob;
      }
    }
  }

  flat.state_reward.assign(mdp.horizon, std::vector<double>(s, 0.0));
  for (int t = 1; t <= mdp.horizon; ++t)
    for (std::size_t x = 0; x < s; ++x) flat.state_reward[t - 1][x] = step_reward(mdp, t, states[x]);
  return flat;
}

namespace {

double entropy_of(const double* p, std::size_t n) {
  double h = 0.0;
  for (std::size_t k = 0; k < n; ++k)
    if (p[k] > 0.0) h -= p[k] * std::log(p[k]);
  return h;
}

}  // namespace

double normalized_entropy(const FactoredMdp& mdp) {
  const int ne = mdp.num_entities();
  double states = 1.0, log_card_sum = 0.0;
  for (int i = 0; i < ne; ++i) {
    states *= mdp.card(i);
    log_card_sum += std::log(static_cast<double>(mdp.card(i)));
  }
  double num = 0.0;
  for (int i = 0; i < ne; ++i) {
    const auto& d = mdp.dynamics[i];
    const std::size_t npa = mdp.config_count(d.parents);
    const std::size_t nc = mdp.card(i);
    const double weight = states / static_cast<double>(npa);
    for (std::size_t row = 0; row < npa * mdp.num_actions; ++row)
      num += weight * entropy_of(&d.cpt[row * nc], nc);
  }
  return num / (mdp.num_actions * states * log_card_sum);
}

double normalized_entropy(const FlatMdp& flat) {
  const std::size_t s = flat.num_states;
  double num = 0.0;
  for (std::size_t row = 0; row < s * flat.num_actions; ++row) num += entropy_of(&flat.transition[row * s], s);
  return num / (flat.num_actions * static_cast<double>(s) * std::log(static_cast<double>(s)));
}

RewardNormalization normalize_rewards(const FactoredMdp& mdp) {
  if (mdp.rewards.empty()) throw std::invalid_argument("normalize_rewards: no reward factors");
  RewardNormalization out;
  out.mdp = mdp;
  double total_range = 0.0;
  for (const auto& rf : mdp.rewards) {
    auto [lo, hi] = std::minmax_element(rf.table.begin(), rf.table.end());
    total_range += *hi - *lo;
    out.offsets.push_back(*lo);
  }
  if (total_range <= 0.0) {
    out.degenerate = true;
    out.scale = 1.0;
  } else {
    out.scale = total_range;
  }
  for (std::size_t r = 0; r < mdp.rewards.size(); ++r)
    for (double& v : out.mdp.rewards[r].table) v = (v - out.offsets[r]) / out.scale;
  return out;
}

FactoredMdp truncated_view(const FactoredMdp& mdp, const std::vector<int>& state, int start, int horizon) {
  if (start < 1 || horizon < 1 || start + horizon - 1 > mdp.horizon)
    throw std::invalid_argument("truncated_view: window outside the horizon");
  FactoredMdp view = mdp;
  view.horizon = horizon;
  for (int i = 0; i < mdp.num_entities(); ++i) {
    view.initial[i].assign(mdp.card(i), 0.0);
    view.initial[i][state[i]] = 1.0;
  }
  for (auto& rf : view.rewards) {
    if (!rf.active_steps) continue;
    std::vector<int> steps;
    for (int s = 1; s <= horizon; ++s)
      if (std::find(rf.active_steps->begin(), rf.active_steps->end(), start + s - 1) != rf.active_steps->end())
        steps.push_back(s);
    rf.active_steps = steps;
  }
  return view;
}

}  // namespace planference
