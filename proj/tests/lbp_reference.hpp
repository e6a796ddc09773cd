#pragma once

// Plain sum-product loopy belief propagation on the unrolled planning factor
// graph, with messages stored in log space and every sum taken in
// probability space over the full factor table. It follows the same
// slice-local schedule, damping and normalization conventions as the VBP
// engine so the two can be compared message by message at eps = 1.

#include <cmath>
#include <vector>

#include "planference/model.hpp"

namespace testsupport {

class ReferenceLbp {
 public:
  struct Factor {
    bool dynamics = true;
    int source = 0;  // entity or reward index
    int t = 1;
    std::vector<int> parents;
    std::vector<int> cards;
    std::size_t configs = 1;
    std::vector<std::vector<double>> to_factor;  // [k][x]
    std::vector<std::vector<double>> to_var;     // [k][x]
    std::vector<double> pa_in;                   // [cfg]
    std::vector<double> pa_back;                 // [cfg]
    std::vector<double> q;                       // [cfg * A + a], dynamics only
    std::vector<double> act_out;                 // [a]
    std::vector<double> act_in;                  // [a]

    int digit(std::size_t cfg, std::size_t k) const {
      std::size_t stride = 1;
      for (std::size_t j = parents.size(); j-- > k + 1;) stride *= cards[j];
      return static_cast<int>((cfg / stride) % cards[k]);
    }
  };

  ReferenceLbp(const planference::FactoredMdp& mdp, double lambda, double damping)
      : mdp_(mdp), lambda_(lambda), damping_(damping) {
    const int T = mdp.horizon, N = mdp.num_entities(), A = mdp.num_actions;
    slices_.resize(T);
    for (int t = 1; t <= T; ++t) {
      if (t < T)
        for (int i = 0; i < N; ++i) add(true, i, t, mdp.dynamics[i].parents, A);
      for (std::size_t r = 0; r < mdp.rewards.size(); ++r)
        if (mdp.rewards[r].active_at(t)) add(false, static_cast<int>(r), t, mdp.rewards[r].parents, A);
    }
    fwd_.assign(T, {});
    bwd_.assign(T, {});
    for (int t = 1; t <= T; ++t)
      for (int j = 0; j < N; ++j) {
        std::vector<double> f(mdp.card(j), 0.0);
        if (t == 1)
          for (int x = 0; x < mdp.card(j); ++x) f[x] = std::log(mdp.initial[j][x]);
        fwd_[t - 1].push_back(f);
        bwd_[t - 1].emplace_back(mdp.card(j), 0.0);
      }
  }

  const std::vector<Factor>& factors() const { return factors_; }
  const std::vector<int>& slice(int t) const { return slices_[t - 1]; }
  const std::vector<double>& forward(int t, int j) const { return fwd_[t - 1][j]; }
  const std::vector<double>& backward(int t, int j) const { return bwd_[t - 1][j]; }

  void update(int t) {
    const int A = mdp_.num_actions;
    const double d = damping_;
    std::vector<int> dyn;
    for (int id : slices_[t - 1])
      if (factors_[id].dynamics) dyn.push_back(id);

    for (int id : dyn) {
      Factor& f = factors_[id];
      const int C = mdp_.card(f.source);
      const auto& child_back = bwd_[t][f.source];
      for (std::size_t cfg = 0; cfg < f.configs; ++cfg)
        for (int a = 0; a < A; ++a) {
          double s = 0.0;
          for (int x = 0; x < C; ++x) s += p(f, cfg, a, x) * std::exp(child_back[x]);
          f.q[cfg * A + a] = std::log(s);
        }
      for (std::size_t cfg = 0; cfg < f.configs; ++cfg) {
        double s = 0.0;
        for (int a = 0; a < A; ++a)
          for (int x = 0; x < C; ++x) s += p(f, cfg, a, x) * std::exp(child_back[x] + f.act_in[a]);
        f.pa_back[cfg] = std::log(s);
      }
      std::vector<double> next(A);
      for (int a = 0; a < A; ++a) {
        double s = 0.0;
        for (std::size_t cfg = 0; cfg < f.configs; ++cfg)
          for (int x = 0; x < C; ++x) s += p(f, cfg, a, x) * std::exp(child_back[x] + f.pa_in[cfg]);
        next[a] = d * f.act_out[a] + (1.0 - d) * std::log(s);
      }
      normalize(next);
      f.act_out = next;
    }
    for (int id : dyn) {
      Factor& f = factors_[id];
      for (int a = 0; a < A; ++a) {
        double s = 0.0;
        for (int other : dyn)
          if (other != id) s += factors_[other].act_out[a];
        f.act_in[a] = s;
      }
    }
    for (int id : dyn) {
      const Factor& f = factors_[id];
      const int C = mdp_.card(f.source);
      auto& out = fwd_[t][f.source];
      std::vector<double> next(C);
      for (int x = 0; x < C; ++x) {
        double s = 0.0;
        for (std::size_t cfg = 0; cfg < f.configs; ++cfg)
          for (int a = 0; a < A; ++a) s += p(f, cfg, a, x) * std::exp(f.pa_in[cfg] + f.act_in[a]);
        next[x] = d * out[x] + (1.0 - d) * std::log(s);
      }
      normalize(next);
      out = next;
    }
    for (int id : slices_[t - 1]) {
      Factor& f = factors_[id];
      for (std::size_t cfg = 0; cfg < f.configs; ++cfg) {
        double s = 0.0;
        for (std::size_t k = 0; k < f.parents.size(); ++k) s += f.to_factor[k][f.digit(cfg, k)];
        f.pa_in[cfg] = s;
      }
    }
    for (int id : slices_[t - 1]) {
      Factor& f = factors_[id];
      for (std::size_t k = 0; k < f.parents.size(); ++k) {
        const int j = f.parents[k];
        std::vector<double> next = fwd_[t - 1][j];
        for (int other : slices_[t - 1]) {
          const Factor& g = factors_[other];
          for (std::size_t k2 = 0; k2 < g.parents.size(); ++k2)
            if (g.parents[k2] == j && other != id)
              for (std::size_t x = 0; x < next.size(); ++x) next[x] += g.to_var[k2][x];
        }
        normalize(next);
        f.to_factor[k] = next;
      }
    }
    for (int id : slices_[t - 1]) {
      Factor& f = factors_[id];
      for (std::size_t k = 0; k < f.parents.size(); ++k) {
        std::vector<double> sum(f.cards[k], 0.0);
        for (std::size_t cfg = 0; cfg < f.configs; ++cfg) {
          double others = 0.0;
          for (std::size_t k2 = 0; k2 < f.parents.size(); ++k2)
            if (k2 != k) others += f.to_factor[k2][f.digit(cfg, k2)];
          sum[f.digit(cfg, k)] += std::exp(f.pa_back[cfg] + others);
        }
        for (int x = 0; x < f.cards[k]; ++x) f.to_var[k][x] = d * f.to_var[k][x] + (1.0 - d) * std::log(sum[x]);
      }
    }
    for (int j = 0; j < mdp_.num_entities(); ++j) {
      auto& out = bwd_[t - 1][j];
      for (std::size_t x = 0; x < out.size(); ++x) {
        double s = 0.0;
        for (int id : slices_[t - 1]) {
          const Factor& f = factors_[id];
          for (std::size_t k = 0; k < f.parents.size(); ++k)
            if (f.parents[k] == j) s += f.to_var[k][x];
        }
        out[x] = s;
      }
    }
  }

 private:
  void add(bool dynamics, int source, int t, const std::vector<int>& parents, int A) {
    Factor f;
    f.dynamics = dynamics;
    f.source = source;
    f.t = t;
    f.parents = parents;
    for (int j : parents) {
      f.cards.push_back(mdp_.card(j));
      f.configs *= mdp_.card(j);
      f.to_factor.emplace_back(mdp_.card(j), 0.0);
      f.to_var.emplace_back(mdp_.card(j), 0.0);
    }
    f.pa_in.assign(f.configs, 0.0);
    f.pa_back.assign(f.configs, 0.0);
    if (dynamics) {
      f.q.assign(f.configs * A, 0.0);
      f.act_out.assign(A, 0.0);
      f.act_in.assign(A, 0.0);
    } else {
      for (std::size_t c = 0; c < f.configs; ++c) f.pa_back[c] = lambda_ * mdp_.rewards[source].table[c];
    }
    slices_[t - 1].push_back(static_cast<int>(factors_.size()));
    factors_.push_back(std::move(f));
  }

  double p(const Factor& f, std::size_t cfg, int a, int x) const {
    const int C = mdp_.card(f.source);
    return mdp_.dynamics[f.source].cpt[(cfg * mdp_.num_actions + a) * C + x];
  }

  static void normalize(std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += std::exp(x);
    const double z = std::log(s);
    for (double& x : v) x -= z;
  }

  const planference::FactoredMdp& mdp_;
  double lambda_;
  double damping_;
  std::vector<Factor> factors_;
  std::vector<std::vector<int>> slices_;
  std::vector<std::vector<std::vector<double>>> fwd_, bwd_;  // [t-1][j][x]
};

}  // namespace testsupport
