#include "planference/domains.hpp"

#include <cmath>
#include <random>
#include <string>

#include "planference/oracle.hpp"

namespace planference {

namespace {

double unit_uniform(std::mt19937_64& rng) {
  // Open interval (0, 1); fixed mapping so instances are portable.
  return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
}

void validate_spec(const SyntheticSpec& s) {
  if (!(s.target_entropy > 0.0 && s.target_entropy < 1.0))
    throw std::invalid_argument("target entropy must lie strictly inside (0, 1)");
  if (s.num_entities < 1 || s.num_states < 2 || s.num_actions < 1 || s.horizon < 1)
    throw std::invalid_argument("synthetic spec needs N_e >= 1, N_s >= 2, N_a >= 1, T >= 1");
  if (!s.parents && (s.parents_per_entity < 1 || (s.num_entities > 1 && s.parents_per_entity >= s.num_entities) ||
                     (s.num_entities == 1 && s.parents_per_entity != 1)))
    throw std::invalid_argument("parents per entity must be in [1, N_e)");
  if (s.parents && static_cast<int>(s.parents->size()) != s.num_entities)
    throw std::invalid_argument("explicit parent list needs one entry per entity");
}

struct RawRows {
  // log Pbar for every conditional row, per entity.
  std::vector<std::vector<double>> log_base;
};

void fill_cpts(FactoredMdp& mdp, const RawRows& raw, double s) {
  for (int i = 0; i < mdp.num_entities(); ++i) {
    const auto& lb = raw.log_base[i];
    auto& cpt = mdp.dynamics[i].cpt;
    const std::size_t nc = mdp.card(i);
    for (std::size_t row = 0; row < lb.size() / nc; ++row) {
      const double* src = &lb[row * nc];
      std::vector<double> scaled(nc);
      for (std::size_t k = 0; k < nc; ++k) scaled[k] = s * src[k];
      double z = log_sum_exp(scaled);
      for (std::size_t k = 0; k < nc; ++k) cpt[row * nc + k] = std::exp(scaled[k] - z);
    }
  }
}

}  // namespace

SyntheticInstance generate_synthetic_instance(const SyntheticSpec& spec) {
  validate_spec(spec);
  std::mt19937_64 rng(spec.seed);
  FactoredMdp mdp;
  mdp.horizon = spec.horizon;
  mdp.num_actions = spec.num_actions;
  const int ne = spec.num_entities;
  for (int i = 0; i < ne; ++i) mdp.entities.push_back({"e" + std::to_string(i), spec.num_states});
  for (int i = 0; i < ne; ++i) {
    std::vector<double> init(spec.num_states, 0.0);
    init[0] = 1.0;
    mdp.initial.push_back(std::move(init));
  }
  RawRows raw;
  for (int i = 0; i < ne; ++i) {
    DynamicsFactor d;
    d.entity = i;
    if (spec.parents) {
      d.parents = (*spec.parents)[i];
    } else {
      for (int k = 0; k < spec.parents_per_entity; ++k) d.parents.push_back((i + k) % ne);
    }
    const std::size_t n = mdp.config_count(d.parents) * spec.num_actions * spec.num_states;
    d.cpt.assign(n, 0.0);
    std::vector<double> lb(n);
    for (double& v : lb) v = std::log(unit_uniform(rng));
    raw.log_base.push_back(std::move(lb));
    mdp.dynamics.push_back(std::move(d));
  }
  RewardFactor goal;
  goal.parents = {0};
  goal.table.assign(spec.num_states, 0.0);
  goal.table[0] = 1.0;
  goal.active_steps = std::vector<int>{spec.horizon};
  mdp.rewards.push_back(std::move(goal));

  auto entropy_at = [&](double s) {
    fill_cpts(mdp, raw, s);
    return normalized_entropy(mdp);
  };
  const double h_hi = entropy_at(kMinExponent);
  const double h_lo = entropy_at(kMaxExponent);
  const double target = spec.target_entropy;
  if (target > h_hi || target < h_lo)
    throw UnreachableTarget("target entropy " + std::to_string(target) + " unreachable; achievable range is [" +
                                std::to_string(h_lo) + ", " + std::to_string(h_hi) + "]",
                            h_lo, h_hi);
  // Bisection on log s: entropy decreases monotonically in s.
  double lo = std::log(kMinExponent), hi = std::log(kMaxExponent);
  for (int it = 0; it < 200 && hi - lo > 1e-13; ++it) {
    double mid = 0.5 * (lo + hi);
    if (entropy_at(std::exp(mid)) > target)
      lo = mid;
    else
      hi = mid;
  }
  SyntheticInstance out;
  out.exponent = std::exp(0.5 * (lo + hi));
  out.achieved_entropy = entropy_at(out.exponent);
  out.mdp = std::move(mdp);
  require_valid(out.mdp);
  return out;
}

FactoredMdp generate_synthetic(const SyntheticSpec& spec) { return generate_synthetic_instance(spec).mdp; }

FactoredMdp build_reactivity_env() {
  constexpr int kCard = 6, kActions = 8, kHorizon = 7;
  FactoredMdp mdp;
  mdp.horizon = kHorizon;
  mdp.num_actions = kActions;
  mdp.entities = {{"location", kCard}, {"knob", kCard}};
  mdp.initial = {std::vector<double>(kCard, 0.0), std::vector<double>(kCard, 0.0)};
  mdp.initial[0][0] = 1.0;
  mdp.initial[1][5] = 1.0;

  // Location: parents (location, knob).
  DynamicsFactor loc;
  loc.entity = 0;
  loc.parents = {0, 1};
  loc.cpt.assign(static_cast<std::size_t>(kCard) * kCard * kActions * kCard, 0.0);
  for (int x = 0; x < kCard; ++x)
    for (int k = 0; k < kCard; ++k)
      for (int a = 0; a < kActions; ++a) {
        double* row = &loc.cpt[((static_cast<std::size_t>(x) * kCard + k) * kActions + a) * kCard];
        if (x == 0 || a >= 6) {
          for (int n = 1; n < kCard; ++n) row[n] = 1.0 / 5.0;
        } else {
          double keep = k / 5.0;
          row[(x + a) % kCard] += keep;
          row[0] += 1.0 - keep;
        }
      }
  DynamicsFactor knob;
  knob.entity = 1;
  knob.parents = {1};
  knob.cpt.assign(static_cast<std::size_t>(kCard) * kActions * kCard, 0.0);
  for (int k = 0; k < kCard; ++k)
    for (int a = 0; a < kActions; ++a) {
      int next = k;
      if (a == 6 && k > 0) next = k - 1;
      if (a == 7 && k < kCard - 1) next = k + 1;
      knob.cpt[(static_cast<std::size_t>(k) * kActions + a) * kCard + next] = 1.0;
    }
  mdp.dynamics = {std::move(loc), std::move(knob)};

  RewardFactor goal;
  goal.parents = {0, 1};
  goal.table.assign(static_cast<std::size_t>(kCard) * kCard, 0.0);
  for (int k = 0; k < kCard; ++k) goal.table[k] = (k == 5) ? 1.0 : 0.33;
  goal.active_steps = std::vector<int>{kHorizon};
  mdp.rewards.push_back(std::move(goal));
  require_valid(mdp);
  return mdp;
}

}  // namespace planference
