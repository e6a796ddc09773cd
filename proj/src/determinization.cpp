#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <ceres/ceres.h>

#include "planference/fw.hpp"
#include "planference/polytope.hpp"

namespace planference {

namespace {

// Outcome of an inverse-CDF draw at u from a distribution over n outcomes.
void inverse_cdf(const double* p, int n, int levels, int* out, double* err) {
  int last = n - 1;
  while (last > 0 && !(p[last] > 0.0)) --last;
  std::vector<int> counts(n, 0);
  double cum = 0.0;
  int k = 0;
  for (int g = 0; g < levels; ++g) {
    const double u = (g + 0.5) / levels;
    while (k < n && !(cum + p[k] > u)) cum += p[k++];
    const int x = k < n ? k : last;
    out[g] = x;
    ++counts[x];
  }
  for (int x = 0; x < n; ++x) *err = std::max(*err, std::abs(static_cast<double>(counts[x]) / levels - p[x]));
}

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double edge_reward(const FlatMdp& f, int t, int x, int a, int xn) {
  return f.has_transition_reward ? f.r_trans(t, x, a, xn) : 0.0;
}

}  // namespace

Determinization determinize(const FlatMdp& f, int levels) {
  if (levels < 1) throw std::invalid_argument("determinization needs at least one level");
  const int S = f.num_states, A = f.num_actions;
  Determinization d;
  d.levels = levels;
  d.num_states = S;
  d.num_actions = A;
  d.initial_outcome.resize(levels);
  d.outcome.resize(static_cast<std::size_t>(S) * A * levels);
  inverse_cdf(f.initial.data(), S, levels, d.initial_outcome.data(), &d.reconstruction_error);
  for (int x = 0; x < S; ++x)
    for (int a = 0; a < A; ++a)
      inverse_cdf(&f.transition[f.tindex(x, a, 0)], S, levels,
                  &d.outcome[(static_cast<std::size_t>(x) * A + a) * levels], &d.reconstruction_error);
  return d;
}

MonteCarloEstimate hindsight_mc(const FlatMdp& f, int samples, std::uint64_t seed, int levels) {
  if (samples < 1) throw std::invalid_argument("hindsight_mc needs at least one sample");
  const Determinization det = determinize(f, levels);
  const int S = f.num_states, A = f.num_actions, T = f.horizon;
  std::vector<double> utility(samples);
  std::vector<int> gamma(T);
  std::vector<double> next(S), cur(S);
  std::uint64_t state = seed;
  for (int n = 0; n < samples; ++n) {
    for (int t = 0; t < T; ++t) gamma[t] = static_cast<int>(splitmix64(state) % static_cast<std::uint64_t>(levels));
    for (int x = 0; x < S; ++x) next[x] = f.r_state(T, x);
    for (int t = T - 1; t >= 1; --t) {
      for (int x = 0; x < S; ++x) {
        double best = -std::numeric_limits<double>::infinity();
        for (int a = 0; a < A; ++a) {
          const int xn = det.next(x, a, gamma[t]);
          best = std::max(best, edge_reward(f, t, x, a, xn) + next[xn]);
        }
        cur[x] = f.r_state(t, x) + best;
      }
      next.swap(cur);
    }
    utility[n] = next[det.initial_outcome[gamma[0]]];
  }
  const double c = *std::max_element(utility.begin(), utility.end());
  double total = 0.0;
  std::vector<double> w(samples);
  for (int n = 0; n < samples; ++n) total += w[n] = std::exp(utility[n] - c);
  MonteCarloEstimate out;
  out.samples = samples;
  out.estimate = c + std::log(total / samples);
  if (samples > 1) {
    // Jackknife over leave-one-out log-mean-exp estimates.
    std::vector<double> loo(samples);
    double mean = 0.0;
    for (int n = 0; n < samples; ++n) {
      loo[n] = c + std::log(std::max(total - w[n], std::numeric_limits<double>::min()) / (samples - 1));
      mean += loo[n];
    }
    mean /= samples;
    double ss = 0.0;
    for (double v : loo) ss += (v - mean) * (v - mean);
    out.standard_error = std::sqrt((samples - 1.0) / samples * ss);
  }
  return out;
}

namespace {

// Smoothed dual of the hindsight bound: a soft-max Bellman recursion over
// trajectories with per-step gamma tilts h, plus the log-partition of each
// tilted uniform prior. Its minimizer's trajectory distribution supplies a
// near-optimal primal point.
class SmoothedDual : public ceres::FirstOrderFunction {
 public:
  SmoothedDual(const FlatMdp& f, const Determinization& det)
      : f_(f), det_(det), S_(f.num_states), A_(f.num_actions), T_(f.horizon), K_(det.levels),
        w_((T_ + 1) * S_), alpha_((T_ + 1) * S_), scores_(static_cast<std::size_t>(A_) * K_) {}

  void set_temperature(double tau) { tau_ = tau; }
  int NumParameters() const override { return T_ * K_; }

  bool Evaluate(const double* h, double* cost, double* grad) const override {
    std::vector<double> mu;
    double reward = 0.0;
    *cost = sweep(h, grad ? &mu : nullptr, &reward);
    for (int t = 0; t < T_; ++t) {
      const double* ht = h + t * K_;
      const double mx = *std::max_element(ht, ht + K_);
      double z = 0.0;
      for (int g = 0; g < K_; ++g) z += std::exp(ht[g] - mx);
      *cost += mx + std::log(z / K_);
      if (grad)
        for (int g = 0; g < K_; ++g) grad[t * K_ + g] = std::exp(ht[g] - mx) / z - mu[t * K_ + g];
    }
    return std::isfinite(*cost);
  }

  // Soft-max path value; optionally the gamma marginals and expected reward
  // of the corresponding trajectory distribution.
  double sweep(const double* h, std::vector<double>* mu, double* reward) const {
    for (int x = 0; x < S_; ++x) w_[T_ * S_ + x] = f_.r_state(T_, x);
    for (int t = T_ - 1; t >= 1; --t)
      for (int x = 0; x < S_; ++x) w_[t * S_ + x] = f_.r_state(t, x) + soft_step(h, t, x, nullptr, nullptr);
    double root_max = -std::numeric_limits<double>::infinity();
    for (int g = 0; g < K_; ++g) root_max = std::max(root_max, (-h[g] + w_[S_ + det_.initial_outcome[g]]) / tau_);
    double root = 0.0;
    for (int g = 0; g < K_; ++g) root += std::exp((-h[g] + w_[S_ + det_.initial_outcome[g]]) / tau_ - root_max);
    const double value = tau_ * (root_max + std::log(root));
    if (!mu) return value;
    mu->assign(static_cast<std::size_t>(T_) * K_, 0.0);
    std::fill(alpha_.begin(), alpha_.end(), 0.0);
    for (int g = 0; g < K_; ++g) {
      const double p = std::exp((-h[g] + w_[S_ + det_.initial_outcome[g]]) / tau_ - root_max) / root;
      (*mu)[g] = p;
      alpha_[S_ + det_.initial_outcome[g]] += p;
    }
    double r = 0.0;
    for (int t = 1; t <= T_; ++t)
      for (int x = 0; x < S_; ++x) {
        const double ax = alpha_[t * S_ + x];
        if (ax <= 0.0) continue;
        r += ax * f_.r_state(t, x);
        if (t < T_) soft_step(h, t, x, mu, &r, ax);
      }
    *reward = r;
    return value;
  }

 private:
  double edge(int t, int x, int a, int xn) const {
    return f_.has_transition_reward ? f_.r_trans(t, x, a, xn) : 0.0;
  }

  // Soft-max over (a, gamma) of the continuation at (t, x). With mu set,
  // pushes mass ax forward instead of returning the value.
  double soft_step(const double* h, int t, int x, std::vector<double>* mu, double* r, double ax = 0.0) const {
    const double* ht = h + t * K_;
    double mx = -std::numeric_limits<double>::infinity();
    for (int a = 0; a < A_; ++a)
      for (int g = 0; g < K_; ++g) {
        const int xn = det_.next(x, a, g);
        const double s = (-ht[g] + edge(t, x, a, xn) + w_[(t + 1) * S_ + xn]) / tau_;
        scores_[static_cast<std::size_t>(a) * K_ + g] = s;
        mx = std::max(mx, s);
      }
    double z = 0.0;
    for (double s : scores_) z += std::exp(s - mx);
    if (!mu) return tau_ * (mx + std::log(z));
    for (int a = 0; a < A_; ++a)
      for (int g = 0; g < K_; ++g) {
        const double p = ax * std::exp(scores_[static_cast<std::size_t>(a) * K_ + g] - mx) / z;
        if (p == 0.0) continue;
        const int xn = det_.next(x, a, g);
        (*mu)[t * K_ + g] += p;
        alpha_[(t + 1) * S_ + xn] += p;
        *r += p * edge(t, x, a, xn);
      }
    return 0.0;
  }

  const FlatMdp& f_;
  const Determinization& det_;
  int S_, A_, T_, K_;
  double tau_ = 1.0;
  mutable std::vector<double> w_, alpha_, scores_;
};

}  // namespace

// Iterates live in (expected reward, q(gamma_0), ..., q(gamma_{T-1})): the
// bound depends on a distribution over hindsight trajectories only through
// these, and every trajectory maps to a vertex (R, one-hot gammas).
FwReport det_ub_concave(const FlatMdp& f, const FwOptions& opts, int levels) {
  const Determinization det = determinize(f, levels);
  const int S = f.num_states, A = f.num_actions, T = f.horizon, K = levels;
  const int n = 1 + T * K;
  const double logK = std::log(static_cast<double>(K));
  constexpr double kLogFloor = -700.0;

  FwObjective obj;
  obj.value = [&](const std::vector<double>& x) {
    double v = x[0];
    for (int k = 1; k < n; ++k)
      if (x[k] > 0.0) v -= x[k] * (std::log(x[k]) + logK);
    return v;
  };
  obj.gradient = [&](const std::vector<double>& x, std::vector<double>& g) {
    g.assign(n, 0.0);
    g[0] = 1.0;
    for (int k = 1; k < n; ++k) g[k] = -(x[k] > 0.0 ? std::max(std::log(x[k]), kLogFloor) : kLogFloor) - logK - 1.0;
  };
  // Best trajectory for a linear score: reward plus per-step gamma scores.
  std::vector<double> value((T + 1) * S), best_score(T);
  std::vector<int> arg_a(T * S), arg_g(T * S);
  obj.lmo = [&](const std::vector<double>& g) {
    auto h = [&](int t, int gamma) { return g[1 + t * K + gamma]; };
    for (int x = 0; x < S; ++x) value[T * S + x] = g[0] * f.r_state(T, x);
    for (int t = T - 1; t >= 1; --t)
      for (int x = 0; x < S; ++x) {
        double best = -std::numeric_limits<double>::infinity();
        for (int a = 0; a < A; ++a)
          for (int gm = 0; gm < K; ++gm) {
            const int xn = det.next(x, a, gm);
            const double v = h(t, gm) + g[0] * edge_reward(f, t, x, a, xn) + value[(t + 1) * S + xn];
            if (v > best) {
              best = v;
              arg_a[t * S + x] = a;
              arg_g[t * S + x] = gm;
            }
          }
        value[t * S + x] = g[0] * f.r_state(t, x) + best;
      }
    int g0 = 0;
    for (int gm = 1; gm < K; ++gm)
      if (h(0, gm) + value[S + det.initial_outcome[gm]] > h(0, g0) + value[S + det.initial_outcome[g0]]) g0 = gm;
    std::vector<double> v(n, 0.0);
    v[1 + g0] = 1.0;
    int x = det.initial_outcome[g0];
    double reward = f.r_state(1, x);
    for (int t = 1; t < T; ++t) {
      const int a = arg_a[t * S + x], gm = arg_g[t * S + x];
      const int xn = det.next(x, a, gm);
      reward += edge_reward(f, t, x, a, xn) + f.r_state(t + 1, xn);
      v[1 + t * K + gm] = 1.0;
      x = xn;
    }
    v[0] = reward;
    return v;
  };

  // Warm start from the smoothed dual at decreasing temperatures.
  auto* dual = new SmoothedDual(f, det);
  ceres::GradientProblem problem(dual);
  ceres::GradientProblemSolver::Options so;
  so.line_search_direction_type = ceres::LBFGS;
  so.logging_type = ceres::SILENT;
  so.max_num_iterations = 500;
  so.function_tolerance = 1e-13;
  so.gradient_tolerance = 1e-11;
  so.parameter_tolerance = 1e-13;
  std::vector<double> h(static_cast<std::size_t>(T) * K, 0.0);
  for (double tau = 1.0; tau >= 1e-6; tau *= 0.1) {
    dual->set_temperature(tau);
    ceres::GradientProblemSolver::Summary summary;
    ceres::Solve(so, problem, h.data(), &summary);
  }
  std::vector<double> mu;
  double reward = 0.0;
  dual->sweep(h.data(), &mu, &reward);
  std::vector<double> x0(n);
  x0[0] = reward;
  std::copy(mu.begin(), mu.end(), x0.begin() + 1);

  // Any tilt h certifies an upper bound through the exact trajectory oracle.
  std::vector<double> tilt(n, 0.0);
  tilt[0] = 1.0;
  for (std::size_t k = 0; k < h.size(); ++k) tilt[1 + k] = -h[k];
  const std::vector<double> best = obj.lmo(tilt);
  double upper = 0.0;
  for (int k = 0; k < n; ++k) upper += tilt[k] * best[k];
  for (int t = 0; t < T; ++t) {
    const double* ht = h.data() + static_cast<std::size_t>(t) * K;
    const double mx = *std::max_element(ht, ht + K);
    double z = 0.0;
    for (int g = 0; g < K; ++g) z += std::exp(ht[g] - mx);
    upper += mx + std::log(z / K);
  }

  FwReport rep;
  const double start = obj.value(x0);
  if (upper - start <= opts.gap_tol) {
    rep.value = start;
    rep.gap = std::max(0.0, upper - start);
    rep.converged = true;
    rep.history.push_back(start);
    rep.point = x0;
    return rep;
  }
  rep = pairwise_frank_wolfe(obj, x0, opts);
  rep.gap = std::max(0.0, std::min(rep.value + rep.gap, upper) - rep.value);
  rep.converged = rep.gap <= opts.gap_tol;
  return rep;
}

}  // namespace planference
