#include <algorithm>
#include <cmath>
#include <ostream>
#include <limits>
#include <random>
#include <stdexcept>

#include <Eigen/Dense>

#include "planference/mdpio.hpp"
#include "planference/polytope.hpp"

namespace planference {

int LpProgram::add_var(std::string name, double cost) {
  names.push_back(std::move(name));
  objective.push_back(cost);
  return static_cast<int>(names.size()) - 1;
}

void LpProgram::add_row(Row row) {
  for (int j : row.idx)
    if (j < 0 || j >= num_vars()) throw std::out_of_range("LP row '" + row.name + "' references an undeclared variable");
  rows.push_back(std::move(row));
}

void write_lp(const LpProgram& p, std::ostream& os) {
  auto term = [&](double c, int j, bool first) {
    if (c < 0)
      os << "- " << format_decimal(-c) << ' ' << p.names[j];
    else
      os << (first ? "" : "+ ") << format_decimal(c) << ' ' << p.names[j];
  };
  os << "Maximize\n obj:";
  bool first = true;
  for (int j = 0; j < p.num_vars(); ++j)
    if (p.objective[j] != 0.0) {
      os << ' ';
      term(p.objective[j], j, first);
      first = false;
    }
  if (first) os << " 0 " << (p.num_vars() ? p.names[0] : "x");
  os << "\nSubject To\n";
  for (std::size_t r = 0; r < p.rows.size(); ++r) {
    const auto& row = p.rows[r];
    os << ' ' << (row.name.empty() ? "c" + std::to_string(r) : row.name) << ':';
    for (std::size_t k = 0; k < row.idx.size(); ++k) {
      os << ' ';
      term(row.val[k], row.idx[k], k == 0);
    }
    os << " = " << format_decimal(row.rhs) << '\n';
  }
  os << "Bounds\n";
  for (int j = 0; j < p.num_vars(); ++j) os << ' ' << p.names[j] << " >= 0\n";
  os << "End\n";
}

std::string lp_status_name(LpStatus s) {
  switch (s) {
    case LpStatus::Optimal: return "optimal";
    case LpStatus::Infeasible: return "infeasible";
    case LpStatus::Unbounded: return "unbounded";
    case LpStatus::IterationLimit: return "iteration-limit";
  }
  return "unknown";
}

namespace {

constexpr double kPivotTol = 1e-7;
constexpr double kHarrisSlack = 1e-9;
constexpr double kPerturbation = 1e-7;
constexpr int kRefactorEvery = 50;
constexpr int kDegenerateRun = 50;

// Dense tableau over the columns [A | I]; the identity block holds the
// phase-one artificials.
struct Tableau {
  int m = 0;
  int n = 0;
  Eigen::MatrixXd cols;  // original columns
  Eigen::VectorXd rhs;   // right-hand side currently in force
  Eigen::VectorXd cost;
  Eigen::MatrixXd t;     // B^-1 [A | I]
  Eigen::VectorXd b;     // B^-1 rhs
  Eigen::VectorXd d;     // reduced costs
  std::vector<int> basis;
  std::vector<char> allowed;

  bool refactor() {
    Eigen::MatrixXd B(m, m);
    for (int r = 0; r < m; ++r) B.col(r) = cols.col(basis[r]);
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(B);
    if (!(std::abs(lu.determinant()) > 0.0)) return false;
    t = lu.solve(cols);
    b = lu.solve(rhs);
    for (Eigen::Index k = 0; k < t.size(); ++k)
      if (std::abs(t.data()[k]) < 1e-13) t.data()[k] = 0.0;
    Eigen::VectorXd cb(m);
    for (int r = 0; r < m; ++r) cb[r] = cost[basis[r]];
    d = cost - t.transpose() * cb;
    for (int r = 0; r < m; ++r) d[basis[r]] = 0.0;
    return true;
  }

  void pivot(int r, int c) {
    const double inv = 1.0 / t(r, c);
    t.row(r) *= inv;
    b[r] *= inv;
    t(r, c) = 1.0;
    for (int i = 0; i < m; ++i) {
      if (i == r) continue;
      const double f = t(i, c);
      if (f == 0.0) continue;
      t.row(i) -= f * t.row(r);
      t(i, c) = 0.0;
      b[i] -= f * b[r];
    }
    const double f = d[c];
    if (f != 0.0) {
      d -= f * t.row(r).transpose();
      d[c] = 0.0;
    }
    basis[r] = c;
  }

  void remove_row(int r) {
    auto drop = [&](auto& mat) {
      const Eigen::Index rows = mat.rows() - 1;
      if (r < rows) mat.block(r, 0, rows - r, mat.cols()) = mat.block(r + 1, 0, rows - r, mat.cols());
      mat.conservativeResize(rows, Eigen::NoChange);
    };
    drop(cols);
    drop(t);
    const Eigen::Index len = rhs.size() - 1;
    if (r < len) {
      rhs.segment(r, len - r) = rhs.tail(len - r).eval();
      b.segment(r, len - r) = b.tail(len - r).eval();
    }
    rhs.conservativeResize(len);
    b.conservativeResize(len);
    basis.erase(basis.begin() + r);
    --m;
  }

  // Dantzig pricing over columns that admit a stable pivot with a Harris
  // ratio test; after a run of degenerate pivots, Bland's rule until progress.
  LpStatus optimize(double tol, long& iters, long cap) {
    std::vector<int> order;
    long since_refactor = 0;
    int degenerate = 0;
    while (true) {
      if (iters >= cap) return LpStatus::IterationLimit;
      const bool bland = degenerate >= kDegenerateRun;
      order.clear();
      for (int j = 0; j < n; ++j)
        if (allowed[j] && d[j] > tol) order.push_back(j);
      if (order.empty()) return LpStatus::Optimal;
      if (!bland)
        std::sort(order.begin(), order.end(), [&](int x, int y) { return d[x] > d[y] || (d[x] == d[y] && x < y); });
      int enter = -1, leave = -1;
      for (int e : order) {
        double theta = std::numeric_limits<double>::infinity();
        for (int i = 0; i < m; ++i)
          if (t(i, e) > kPivotTol) theta = std::min(theta, (std::max(b[i], 0.0) + (bland ? 0.0 : kHarrisSlack)) / t(i, e));
        if (!std::isfinite(theta)) continue;
        double best = 0.0;
        for (int i = 0; i < m; ++i) {
          const double v = t(i, e);
          if (v <= kPivotTol) continue;
          const double ratio = std::max(b[i], 0.0) / v;
          if (bland) {
            if (ratio <= theta + 1e-12 && (leave < 0 || basis[i] < basis[leave])) leave = i;
          } else if (ratio <= theta && v > best) {
            best = v;
            leave = i;
          }
        }
        enter = e;
        break;
      }
      if (enter < 0) {
        // Improving columns exist but none has a usable pivot.
        bool any_positive = false;
        for (int e : order)
          for (int i = 0; i < m && !any_positive; ++i) any_positive = t(i, e) > 0.0;
        return any_positive ? LpStatus::Optimal : LpStatus::Unbounded;
      }
      degenerate = b[leave] <= 1e-12 ? degenerate + 1 : 0;
      pivot(leave, enter);
      ++iters;
      if (++since_refactor >= kRefactorEvery) {
        since_refactor = 0;
        if (!refactor()) return LpStatus::IterationLimit;
      }
    }
  }

  // Solve with a perturbed right-hand side, then restore it and resume.
  LpStatus optimize_perturbed(const Eigen::VectorXd& exact, double tol, long& iters, long cap,
                              std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, kPerturbation);
    rhs = exact;
    for (int r = 0; r < m; ++r) rhs[r] += u(rng) * (1.0 + std::abs(exact[r]));
    if (!refactor()) return LpStatus::IterationLimit;
    LpStatus st = optimize(tol, iters, cap);
    if (st != LpStatus::Optimal) return st;
    rhs = exact;
    if (!refactor()) return LpStatus::IterationLimit;
    for (int r = 0; r < m; ++r)
      if (b[r] < 0.0 && b[r] > -1e-9) b[r] = 0.0;
    return optimize(tol, iters, cap);
  }
};

}  // namespace

SolveReport SimplexSolver::solve(const LpProgram& p, double tol) const {
  const int nv = p.num_vars();
  const int m0 = static_cast<int>(p.rows.size());
  SolveReport rep;
  rep.x.assign(nv, 0.0);
  Tableau tb;
  tb.m = m0;
  tb.n = nv + m0;
  tb.cols = Eigen::MatrixXd::Zero(m0, tb.n);
  Eigen::VectorXd exact(m0);
  tb.basis.resize(m0);
  for (int r = 0; r < m0; ++r) {
    const auto& row = p.rows[r];
    const double sign = row.rhs < 0.0 ? -1.0 : 1.0;
    for (std::size_t k = 0; k < row.idx.size(); ++k) tb.cols(r, row.idx[k]) += sign * row.val[k];
    exact[r] = sign * row.rhs;
    tb.cols(r, nv + r) = 1.0;
    tb.basis[r] = nv + r;
  }
  std::mt19937_64 rng(0x5eed);
  // Phase 1: maximize -sum(artificials).
  tb.cost = Eigen::VectorXd::Zero(tb.n);
  tb.cost.tail(m0).setConstant(-1.0);
  tb.allowed.assign(tb.n, 1);
  for (int r = 0; r < m0; ++r) tb.allowed[nv + r] = 0;
  long iters = 0;
  const long cap = 50L * (tb.m + tb.n) + 1000;
  LpStatus st = tb.optimize_perturbed(exact, tol, iters, cap, rng);
  rep.iterations = iters;
  if (st == LpStatus::IterationLimit) {
    rep.status = st;
    return rep;
  }
  double infeas = 0.0, scale = 1.0;
  for (int r = 0; r < tb.m; ++r) {
    scale = std::max(scale, std::abs(exact[r]));
    if (tb.basis[r] >= nv) infeas += std::max(tb.b[r], 0.0);
  }
  if (infeas > tol * scale * std::max(1, m0)) {
    rep.status = LpStatus::Infeasible;
    return rep;
  }
  // Drive remaining artificials out of the basis; drop redundant rows.
  Eigen::VectorXd kept = exact;
  for (int r = tb.m - 1; r >= 0; --r) {
    if (tb.basis[r] < nv) continue;
    int col = -1;
    double best = 1e-6;
    for (int j = 0; j < nv; ++j)
      if (std::abs(tb.t(r, j)) > best) {
        best = std::abs(tb.t(r, j));
        col = j;
      }
    if (col >= 0) {
      tb.pivot(r, col);
    } else {
      tb.remove_row(r);
      const Eigen::Index len = kept.size() - 1;
      if (r < len) kept.segment(r, len - r) = kept.tail(len - r).eval();
      kept.conservativeResize(len);
    }
  }
  // Phase 2.
  tb.cost = Eigen::VectorXd::Zero(tb.n);
  for (int j = 0; j < nv; ++j) tb.cost[j] = p.objective[j];
  for (int j = nv; j < tb.n; ++j) tb.allowed[j] = 0;
  st = tb.optimize_perturbed(kept, tol, iters, cap + iters, rng);
  rep.iterations = iters;
  rep.status = st;
  if (st != LpStatus::Optimal) return rep;
  for (int r = 0; r < tb.m; ++r)
    if (tb.basis[r] < nv) rep.x[tb.basis[r]] = std::max(0.0, tb.b[r]);
  rep.objective = 0.0;
  for (int j = 0; j < nv; ++j) rep.objective += p.objective[j] * rep.x[j];
  for (const auto& row : p.rows) {
    double s = -row.rhs;
    for (std::size_t k = 0; k < row.idx.size(); ++k) s += row.val[k] * rep.x[row.idx[k]];
    rep.primal_residual = std::max(rep.primal_residual, std::abs(s));
  }
  return rep;
}

SolveReport solve_lp(const LpProgram& program, double tol) { return SimplexSolver{}.solve(program, tol); }

}  // namespace planference
