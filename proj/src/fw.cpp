#include "planference/fw.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace planference {

namespace {

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
  return s;
}

bool same(const std::vector<double>& a, const std::vector<double>& b) {
  for (std::size_t k = 0; k < a.size(); ++k)
    if (std::abs(a[k] - b[k]) > 1e-12) return false;
  return true;
}

}  // namespace

FwReport pairwise_frank_wolfe(const FwObjective& obj, const std::vector<double>& x0, const FwOptions& opts) {
  const std::size_t n = x0.size();
  std::vector<std::vector<double>> atoms{x0};
  std::vector<double> weight{1.0};
  std::vector<double> x = x0, g(n), d(n), y(n);
  FwReport rep;
  double f = obj.value(x);
  double best_upper = std::numeric_limits<double>::infinity();

  auto slope = [&](double step) {
    for (std::size_t k = 0; k < n; ++k) y[k] = std::max(0.0, x[k] + step * d[k]);
    obj.gradient(y, g);
    return dot(g, d);
  };

  for (int it = 0; it < opts.max_iters; ++it) {
    obj.gradient(x, g);
    std::vector<double> s = obj.lmo(g);
    const double gx = dot(g, x);
    const double gap = std::max(0.0, dot(g, s) - gx);
    best_upper = std::min(best_upper, f + gap);
    rep.iterations = it;
    if (gap <= opts.gap_tol) {
      rep.converged = true;
      break;
    }
    int si = -1;
    for (std::size_t k = 0; k < atoms.size(); ++k)
      if (same(atoms[k], s)) {
        si = static_cast<int>(k);
        break;
      }
    if (si < 0) {
      atoms.push_back(std::move(s));
      weight.push_back(0.0);
      si = static_cast<int>(atoms.size()) - 1;
    }
    int away = -1;
    double worst = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < atoms.size(); ++k) {
      if (weight[k] <= 0.0) continue;
      double v = dot(g, atoms[k]);
      if (v < worst) {
        worst = v;
        away = static_cast<int>(k);
      }
    }
    const bool pairwise = away >= 0 && away != si;
    double gmax = 1.0;
    if (pairwise) {
      for (std::size_t k = 0; k < n; ++k) d[k] = atoms[si][k] - atoms[away][k];
      gmax = weight[away];
    } else {
      for (std::size_t k = 0; k < n; ++k) d[k] = atoms[si][k] - x[k];
    }
    double step;
    if (slope(gmax) >= 0.0) {
      step = gmax;
    } else {
      double lo = 0.0, hi = gmax;
      for (int b = 0; b < 60; ++b) {
        double mid = 0.5 * (lo + hi);
        (slope(mid) > 0.0 ? lo : hi) = mid;
      }
      step = lo;
    }
    for (std::size_t k = 0; k < n; ++k) x[k] = std::max(0.0, x[k] + step * d[k]);
    if (pairwise) {
      weight[si] += step;
      weight[away] -= step;
      if (weight[away] <= 1e-15) weight[away] = 0.0;
    } else {
      for (double& w : weight) w *= 1.0 - step;
      weight[si] += step;
    }
    // Drop atoms that left the active set.
    for (std::size_t k = atoms.size(); k-- > 0;)
      if (weight[k] == 0.0 && atoms.size() > 1) {
        atoms.erase(atoms.begin() + static_cast<std::ptrdiff_t>(k));
        weight.erase(weight.begin() + static_cast<std::ptrdiff_t>(k));
      }
    f = obj.value(x);
    rep.history.push_back(f);
    rep.iterations = it + 1;
  }
  rep.value = f;
  rep.point = x;
  rep.gap = std::max(0.0, best_upper - f);
  if (!rep.converged && rep.gap <= opts.gap_tol) rep.converged = true;
  return rep;
}

}  // namespace planference
