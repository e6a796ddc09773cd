#include "planference/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace planference {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double safe_log(double p) { return p > 0.0 ? std::log(p) : kNegInf; }

void require_positive_lambda(double lambda, const char* what) {
  if (!(lambda > 0.0))
    throw std::invalid_argument(std::string(what) +
                                " is defined with a 1/lambda prefactor and has no finite additive limit; "
                                "use lambda > 0");
}

double ipow(double base, int exp) {
  double r = 1.0;
  for (int k = 0; k < exp; ++k) r *= base;
  return r;
}

// log of the transition weight p(x'|x,a) * exp(lambda * R_t(x,a,x')).
double log_step(const FlatMdp& f, double lambda, int t, int x, int a, int xn) {
  double lp = safe_log(f.p(x, a, xn));
  if (lp == kNegInf) return lp;
  return lp + lambda * f.r_trans(t, x, a, xn);
}

}  // namespace

double log_sum_exp(const double* v, std::size_t n) {
  double m = kNegInf;
  for (std::size_t k = 0; k < n; ++k) m = std::max(m, v[k]);
  if (m == kNegInf) return kNegInf;
  if (m == std::numeric_limits<double>::infinity()) return m;
  double s = 0.0;
  for (std::size_t k = 0; k < n; ++k) s += std::exp(v[k] - m);
  return m + std::log(s);
}

double log_sum_exp(const std::vector<double>& v) { return log_sum_exp(v.data(), v.size()); }

Policy Policy::deterministic(int num_states, int num_actions, const std::vector<std::vector<int>>& choice) {
  Policy p;
  p.num_states = num_states;
  p.num_actions = num_actions;
  for (const auto& row : choice) {
    std::vector<double> tab(static_cast<std::size_t>(num_states) * num_actions, 0.0);
    for (int x = 0; x < num_states; ++x) tab[static_cast<std::size_t>(x) * num_actions + row[x]] = 1.0;
    p.table.push_back(std::move(tab));
  }
  return p;
}

Policy Policy::uniform(int num_states, int num_actions, int horizon) {
  Policy p;
  p.num_states = num_states;
  p.num_actions = num_actions;
  p.table.assign(std::max(horizon - 1, 0),
                 std::vector<double>(static_cast<std::size_t>(num_states) * num_actions, 1.0 / num_actions));
  return p;
}

OracleResult plan_value_iteration(const FlatMdp& f, double lambda) {
  if (lambda < 0.0) throw std::invalid_argument("lambda must be non-negative");
  const int S = f.num_states, A = f.num_actions, T = f.horizon;
  OracleResult res;
  res.backward.assign(T, std::vector<double>(S, 0.0));
  std::vector<std::vector<int>> choice(std::max(T - 1, 0), std::vector<int>(S, 0));
  std::vector<double> terms(S);
  for (int x = 0; x < S; ++x) res.backward[T - 1][x] = (lambda > 0.0 ? lambda : 1.0) * f.r_state(T, x);
  for (int t = T - 1; t >= 1; --t) {
    const auto& next = res.backward[t];
    for (int x = 0; x < S; ++x) {
      double best = kNegInf;
      int best_a = 0;
      for (int a = 0; a < A; ++a) {
        double q;
        if (lambda > 0.0) {
          for (int xn = 0; xn < S; ++xn) terms[xn] = log_step(f, lambda, t, x, a, xn) + next[xn];
          q = log_sum_exp(terms);
        } else {
          q = 0.0;
          for (int xn = 0; xn < S; ++xn) {
            double p = f.p(x, a, xn);
            if (p > 0.0) q += p * (f.r_trans(t, x, a, xn) + next[xn]);
          }
        }
        if (q > best) {
          best = q;
          best_a = a;
        }
      }
      choice[t - 1][x] = best_a;
      res.backward[t - 1][x] = (lambda > 0.0 ? lambda : 1.0) * f.r_state(t, x) + best;
    }
  }
  if (lambda > 0.0) {
    for (int x = 0; x < S; ++x) terms[x] = safe_log(f.initial[x]) + res.backward[0][x];
    res.value = log_sum_exp(terms) / lambda;
  } else {
    double v = 0.0;
    for (int x = 0; x < S; ++x)
      if (f.initial[x] > 0.0) v += f.initial[x] * res.backward[0][x];
    res.value = v;
  }
  res.policy = Policy::deterministic(S, A, choice);
  return res;
}

namespace {

OracleResult forward_marginal(const FlatMdp& f, double lambda, double log_action_prior) {
  const int S = f.num_states, A = f.num_actions, T = f.horizon;
  std::vector<double> alpha(S), next(S), terms(static_cast<std::size_t>(S) * A);
  for (int x = 0; x < S; ++x) alpha[x] = safe_log(f.initial[x]) + lambda * f.r_state(1, x);
  for (int t = 1; t < T; ++t) {
    for (int xn = 0; xn < S; ++xn) {
      std::size_t k = 0;
      for (int x = 0; x < S; ++x)
        for (int a = 0; a < A; ++a) terms[k++] = alpha[x] + log_action_prior + log_step(f, lambda, t, x, a, xn);
      next[xn] = lambda * f.r_state(t + 1, xn) + log_sum_exp(terms);
    }
    alpha.swap(next);
  }
  OracleResult res;
  res.value = log_sum_exp(alpha) / lambda;
  return res;
}

}  // namespace

OracleResult marginal(const FlatMdp& f, double lambda) {
  require_positive_lambda(lambda, "marginal");
  return forward_marginal(f, lambda, 0.0);
}

OracleResult marginal_uniform(const FlatMdp& f, double lambda) {
  require_positive_lambda(lambda, "marginal-u");
  return forward_marginal(f, lambda, -std::log(static_cast<double>(f.num_actions)));
}

OracleResult map_viterbi(const FlatMdp& f, double lambda) {
  require_positive_lambda(lambda, "MAP");
  const int S = f.num_states, A = f.num_actions, T = f.horizon;
  std::vector<std::vector<double>> beta(T, std::vector<double>(S));
  for (int x = 0; x < S; ++x) beta[T - 1][x] = lambda * f.r_state(T, x);
  for (int t = T - 1; t >= 1; --t)
    for (int x = 0; x < S; ++x) {
      double best = kNegInf;
      for (int a = 0; a < A; ++a)
        for (int xn = 0; xn < S; ++xn) best = std::max(best, log_step(f, lambda, t, x, a, xn) + beta[t][xn]);
      beta[t - 1][x] = lambda * f.r_state(t, x) + best;
    }
  OracleResult res;
  double best = kNegInf;
  int x = 0;
  for (int s = 0; s < S; ++s) {
    double v = safe_log(f.initial[s]) + beta[0][s];
    if (v > best) {
      best = v;
      x = s;
    }
  }
  res.value = best / lambda;
  res.states.push_back(x);
  for (int t = 1; t < T; ++t) {
    double target = kNegInf;
    int ba = 0, bx = 0;
    for (int a = 0; a < A; ++a)
      for (int xn = 0; xn < S; ++xn) {
        double v = log_step(f, lambda, t, x, a, xn) + beta[t][xn];
        if (v > target) {
          target = v;
          ba = a;
          bx = xn;
        }
      }
    res.actions.push_back(ba);
    res.states.push_back(bx);
    x = bx;
  }
  res.backward = std::move(beta);
  return res;
}

namespace {

struct SequenceSearch {
  const FlatMdp& f;
  double lambda;
  double best = kNegInf;
  std::vector<int> best_seq;
  std::vector<int> seq;
  std::vector<double> terms;

  // lambda > 0: state holds log forward weights. lambda == 0: state holds
  // the probability of x_t and acc the expected return collected so far.
  void recurse(int t, const std::vector<double>& state, double acc) {
    const int S = f.num_states, A = f.num_actions;
    if (t == f.horizon) {
      double score = lambda > 0.0 ? log_sum_exp(state) : acc;
      if (score > best) {
        best = score;
        best_seq = seq;
      }
      return;
    }
    std::vector<double> next(S);
    for (int a = 0; a < A; ++a) {
      double nacc = acc;
      if (lambda > 0.0) {
        for (int xn = 0; xn < S; ++xn) {
          for (int x = 0; x < S; ++x) terms[x] = state[x] + log_step(f, lambda, t, x, a, xn);
          next[xn] = lambda * f.r_state(t + 1, xn) + log_sum_exp(terms);
        }
      } else {
        std::fill(next.begin(), next.end(), 0.0);
        for (int x = 0; x < S; ++x) {
          if (state[x] <= 0.0) continue;
          for (int xn = 0; xn < S; ++xn) {
            double p = f.p(x, a, xn);
            if (p <= 0.0) continue;
            next[xn] += state[x] * p;
            nacc += state[x] * p * f.r_trans(t, x, a, xn);
          }
        }
        for (int xn = 0; xn < S; ++xn) nacc += next[xn] * f.r_state(t + 1, xn);
      }
      seq.push_back(a);
      recurse(t + 1, next, nacc);
      seq.pop_back();
    }
  }
};

OracleResult sequence_search(const FlatMdp& f, double lambda, std::size_t cap) {
  double count = ipow(f.num_actions, f.horizon - 1);
  if (count > static_cast<double>(cap))
    throw CapExceeded("action-sequence enumeration needs " + std::to_string(static_cast<long double>(count)) +
                          " sequences, cap is " + std::to_string(cap),
                      count, static_cast<double>(cap));
  const int S = f.num_states;
  SequenceSearch s{f, lambda, kNegInf, {}, {}, {}};
  s.terms.resize(S);
  std::vector<double> start(S);
  double acc = 0.0;
  for (int x = 0; x < S; ++x) {
    if (lambda > 0.0) {
      start[x] = safe_log(f.initial[x]) + lambda * f.r_state(1, x);
    } else {
      start[x] = f.initial[x];
      acc += f.initial[x] * f.r_state(1, x);
    }
  }
  s.recurse(1, start, acc);
  OracleResult res;
  res.value = lambda > 0.0 ? s.best / lambda : s.best;
  res.actions = s.best_seq;
  return res;
}

}  // namespace

OracleResult mmap_enumerate(const FlatMdp& f, double lambda, std::size_t cap) {
  require_positive_lambda(lambda, "MMAP");
  return sequence_search(f, lambda, cap);
}

OracleResult conformant_search(const FlatMdp& f, double lambda, std::size_t cap) {
  if (lambda < 0.0) throw std::invalid_argument("lambda must be non-negative");
  return sequence_search(f, lambda, cap);
}

double policy_evaluate(const FlatMdp& f, const Policy& pol, double lambda) {
  const int S = f.num_states, A = f.num_actions, T = f.horizon;
  if (pol.num_states != S || pol.num_actions != A || static_cast<int>(pol.table.size()) != T - 1)
    throw std::invalid_argument("policy shape does not match the MDP");
  if (lambda > 0.0) {
    std::vector<double> alpha(S), next(S), terms(static_cast<std::size_t>(S) * A);
    for (int x = 0; x < S; ++x) alpha[x] = safe_log(f.initial[x]) + lambda * f.r_state(1, x);
    for (int t = 1; t < T; ++t) {
      for (int xn = 0; xn < S; ++xn) {
        std::size_t k = 0;
        for (int x = 0; x < S; ++x)
          for (int a = 0; a < A; ++a) terms[k++] = alpha[x] + safe_log(pol.prob(t, x, a)) + log_step(f, lambda, t, x, a, xn);
        next[xn] = lambda * f.r_state(t + 1, xn) + log_sum_exp(terms);
      }
      alpha.swap(next);
    }
    return log_sum_exp(alpha) / lambda;
  }
  std::vector<double> d = f.initial, next(S);
  double value = 0.0;
  for (int x = 0; x < S; ++x) value += d[x] * f.r_state(1, x);
  for (int t = 1; t < T; ++t) {
    std::fill(next.begin(), next.end(), 0.0);
    for (int x = 0; x < S; ++x) {
      if (d[x] <= 0.0) continue;
      for (int a = 0; a < A; ++a) {
        double w = d[x] * pol.prob(t, x, a);
        if (w <= 0.0) continue;
        for (int xn = 0; xn < S; ++xn) {
          double p = f.p(x, a, xn);
          if (p <= 0.0) continue;
          next[xn] += w * p;
          value += w * p * f.r_trans(t, x, a, xn);
        }
      }
    }
    d.swap(next);
    for (int x = 0; x < S; ++x) value += d[x] * f.r_state(t + 1, x);
  }
  return value;
}

std::vector<double> first_action_values(const FlatMdp& f, double lambda) {
  const int S = f.num_states, A = f.num_actions;
  auto vi = plan_value_iteration(f, lambda);
  if (f.horizon < 2) return std::vector<double>(A, vi.value);
  const auto& next = vi.backward[1];
  std::vector<double> out(A);
  std::vector<double> inner(S), outer(S);
  for (int a = 0; a < A; ++a) {
    if (lambda > 0.0) {
      for (int x = 0; x < S; ++x) {
        for (int xn = 0; xn < S; ++xn) inner[xn] = log_step(f, lambda, 1, x, a, xn) + next[xn];
        outer[x] = safe_log(f.initial[x]) + lambda * f.r_state(1, x) + log_sum_exp(inner);
      }
      out[a] = log_sum_exp(outer) / lambda;
    } else {
      double v = 0.0;
      for (int x = 0; x < S; ++x) {
        if (f.initial[x] <= 0.0) continue;
        double q = f.r_state(1, x);
        for (int xn = 0; xn < S; ++xn) {
          double p = f.p(x, a, xn);
          if (p > 0.0) q += p * (f.r_trans(1, x, a, xn) + next[xn]);
        }
        v += f.initial[x] * q;
      }
      out[a] = v;
    }
  }
  return out;
}

OracleResult brute_force_policy_search(const FlatMdp& f, double lambda, std::size_t cap) {
  const int S = f.num_states, A = f.num_actions, T = f.horizon;
  const int slots = (T - 1) * S;
  double count = ipow(A, slots);
  if (count > static_cast<double>(cap))
    throw CapExceeded("policy enumeration needs " + std::to_string(static_cast<long double>(count)) +
                          " policies, cap is " + std::to_string(cap),
                      count, static_cast<double>(cap));
  std::vector<int> digits(slots, 0);
  std::vector<std::vector<int>> choice(T - 1, std::vector<int>(S, 0));
  OracleResult res;
  res.value = kNegInf;
  while (true) {
    for (int k = 0; k < slots; ++k) choice[k / S][k % S] = digits[k];
    Policy p = Policy::deterministic(S, A, choice);
    double v = policy_evaluate(f, p, lambda);
    if (v > res.value || !res.policy) {
      res.value = v;
      res.policy = std::move(p);
    }
    int k = slots - 1;
    while (k >= 0 && ++digits[k] == A) digits[k--] = 0;
    if (k < 0) break;
  }
  return res;
}

}  // namespace planference
