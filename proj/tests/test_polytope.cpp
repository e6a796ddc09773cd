#include <doctest.h>

#include <cmath>
#include <sstream>

#include "planference/oracle.hpp"
#include "planference/polytope.hpp"
#include "planference/vbp.hpp"
#include "support.hpp"

using namespace planference;
using namespace testsupport;

namespace {

LpProgram program(std::vector<double> c, std::vector<std::vector<double>> a, std::vector<double> b) {
  LpProgram p;
  for (std::size_t j = 0; j < c.size(); ++j) p.add_var("x" + std::to_string(j + 1), c[j]);
  for (std::size_t r = 0; r < a.size(); ++r) {
    LpProgram::Row row;
    for (std::size_t j = 0; j < a[r].size(); ++j)
      if (a[r][j] != 0.0) {
        row.idx.push_back(static_cast<int>(j));
        row.val.push_back(a[r][j]);
      }
    row.rhs = b[r];
    p.add_row(row);
  }
  return p;
}

double exact_additive(const FactoredMdp& m) { return plan_value_iteration(flatten(m), 0.0).value; }

}  // namespace

TEST_CASE("small linear programs") {
  auto r = solve_lp(program({1, 2}, {{1, 1}}, {1}));
  CHECK(r.status == LpStatus::Optimal);
  CHECK(r.objective == doctest::Approx(2.0));
  CHECK(r.x[1] == doctest::Approx(1.0));

  CHECK(solve_lp(program({0, 0}, {{1, 1}}, {1})).objective == 0.0);
  CHECK(solve_lp(program({1}, {{1}}, {-1})).status == LpStatus::Infeasible);
  CHECK(solve_lp(program({1, 0}, {{1, -1}}, {0})).status == LpStatus::Unbounded);

  auto dup = solve_lp(program({1, 3, 0}, {{1, 1, 1}, {1, 1, 1}, {2, 2, 2}}, {2, 2, 4}));
  CHECK(dup.status == LpStatus::Optimal);
  CHECK(dup.objective == doctest::Approx(6.0));
}

TEST_CASE("degenerate program that makes textbook pivoting cycle") {
  // Slack form; optimum 5/4 at x4 = 1, x6 = 1.
  auto r = solve_lp(program({0, 0, 0, 0.75, -20, 0.5, -6},
                            {{1, 0, 0, 0.25, -8, -1, 9}, {0, 1, 0, 0.5, -12, -0.5, 3}, {0, 0, 1, 0, 0, 1, 0}},
                            {0, 0, 1}));
  CHECK(r.status == LpStatus::Optimal);
  CHECK(r.objective == doctest::Approx(1.25));
  CHECK(r.primal_residual < 1e-9);
}

TEST_CASE("flat LP optimum equals additive value iteration") {
  Rng rng(101);
  for (int n = 0; n < 40; ++n) {
    FlatMdp f = random_flat(rng, random_shape(rng));
    auto r = solve_lp(build_flat_lp(f));
    REQUIRE(r.status == LpStatus::Optimal);
    CHECK(std::abs(r.objective - plan_value_iteration(f, 0.0).value) < 1e-6);
  }
}

TEST_CASE("single-entity factored LP equals the flat LP") {
  Rng rng(103);
  for (int n = 0; n < 20; ++n) {
    FlatMdp f = random_flat(rng, random_shape(rng, 4, 3, 4));
    const double flat = solve_lp(build_flat_lp(f)).objective;
    CHECK(std::abs(solve_lp(build_factored_lp(wrap_flat(f))).objective - flat) < 1e-6);
  }
}

TEST_CASE("property: factored LP bounds the exact additive optimum") {
  Rng rng(107);
  for (int n = 0; n < 20; ++n) {
    FactoredMdp m = random_factored(rng, {3, 2, 2, uniform_int(rng, 2, 4), 2}, true);
    auto r = solve_lp(build_factored_lp(m));
    REQUIRE(r.status == LpStatus::Optimal);
    CHECK(r.objective >= exact_additive(m) - 1e-6);
    CHECK(r.primal_residual < 1e-7);
  }
}

TEST_CASE("factored LP layout") {
  Rng rng(109);
  FactoredMdp m = random_factored(rng, {3, 2, 2, 3, 2});
  FactoredLpLayout layout;
  LpProgram p = build_factored_lp(m, &layout);
  CHECK(layout.dynamics_block.size() == 2);
  CHECK(layout.singleton_block.size() == 3);
  CHECK(layout.action_block.size() == 2);
  CHECK(layout.reward_blocks.size() == 4);
  CHECK(layout.dynamics_block[0][1] - layout.dynamics_block[0][0] == 8);
  CHECK(p.num_vars() > layout.action_block.back());
}

TEST_CASE("LP action selection") {
  Rng rng(113);
  FactoredMdp single = random_factored(rng, {3, 2, 1, 3, 2});
  CHECK(lp_action_select(single).action == 0);

  FactoredMdp same = random_factored(rng, {});
  for (auto& d : same.dynamics) {
    const std::size_t C = 2;
    for (std::size_t k = 0; k + 2 * C <= d.cpt.size(); k += 2 * C)
      for (std::size_t x = 0; x < C; ++x) d.cpt[k + C + x] = d.cpt[k + x];
  }
  auto s = lp_action_select(same);
  CHECK(s.action == 0);
  CHECK(s.objectives[0] == doctest::Approx(s.objectives[1]));

  FactoredMdp m = random_factored(rng, {3, 2, 3, 3, 2});
  auto r = lp_action_select(m);
  REQUIRE(r.objectives.size() == 3);
  const double best = *std::max_element(r.objectives.begin(), r.objectives.end());
  CHECK(best <= solve_lp(build_factored_lp(m)).objective + 1e-7);
  CHECK(best >= exact_additive(m) - 1e-7);
  CHECK(r.objectives[r.action] == best);
}

TEST_CASE("concave bound: single entity is exact") {
  Rng rng(127);
  for (int n = 0; n < 10; ++n) {
    FlatMdp f = random_flat(rng, random_shape(rng, 4, 2, 4));
    auto r = solve_concave(wrap_flat(f), 1.0);
    CHECK(r.converged);
    CHECK(r.gap <= 1e-5);
    const double exact = plan_value_iteration(f, 1.0).value;
    CHECK(r.value <= exact + 1e-6);
    CHECK(r.value + r.gap >= exact - 1e-6);
  }
}

TEST_CASE("concave bound: zero reward gives zero") {
  Rng rng(131);
  FactoredMdp m = random_factored(rng, {});
  for (auto& r : m.rewards) std::fill(r.table.begin(), r.table.end(), 0.0);
  auto r = solve_concave(m, 1.0);
  CHECK(std::abs(r.value) < 1e-6);
}

TEST_CASE("concave bound at lambda = 0 is the factored LP") {
  Rng rng(137);
  FactoredMdp m = random_factored(rng, {});
  auto r = solve_concave(m, 0.0);
  CHECK(r.gap == 0.0);
  CHECK(r.value == doctest::Approx(solve_lp(build_factored_lp(m)).objective).epsilon(1e-9));
}

TEST_CASE("property: concave bound dominates the exact value and VBP") {
  Rng rng(139);
  for (int n = 0; n < 8; ++n) {
    FactoredMdp m = random_factored(rng, {3, 2, 2, 3, 2});
    auto r = solve_concave(m, 1.0);
    REQUIRE(r.gap <= 1e-5);
    CHECK(r.value + r.gap >= plan_value_iteration(flatten(m), 1.0).value - 1e-9);
    VbpConfig c;
    c.lambda = 1.0;
    VbpResult v = vbp_solve(m, c);
    if (v.converged) CHECK(r.value + r.gap >= v.bound - 1e-9);
    for (std::size_t k = 1; k < r.history.size(); ++k) CHECK(r.history[k] >= r.history[k - 1]);
    for (const auto& b : r.action_beliefs) {
      double s = 0.0;
      for (double p : b) s += p;
      CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
    }
  }
}

TEST_CASE("pure Frank-Wolfe improves monotonically") {
  Rng rng(149);
  FactoredMdp m = random_factored(rng, {});
  FwOptions o;
  o.barrier_start = false;
  o.max_iters = 50;
  auto r = solve_concave(m, 1.0, o);
  REQUIRE(r.history.size() >= 2);
  for (std::size_t k = 1; k < r.history.size(); ++k) CHECK(r.history[k] >= r.history[k - 1]);
  CHECK(r.value + r.gap >= plan_value_iteration(flatten(m), 1.0).value - 1e-9);
}

TEST_CASE("determinization") {
  FlatMdp f;
  f.num_states = 2;
  f.num_actions = 1;
  f.horizon = 2;
  f.initial = {0.25, 0.75};
  f.transition = {0.5, 0.5, 0.0, 1.0};
  f.state_reward = {{0, 0}, {0, 1}};
  Determinization d = determinize(f, 4);
  CHECK(d.initial_outcome == std::vector<int>{0, 1, 1, 1});
  CHECK(d.next(0, 0, 1) == 0);
  CHECK(d.next(0, 0, 2) == 1);
  CHECK(d.next(1, 0, 0) == 1);
  CHECK(d.reconstruction_error == 0.0);

  f.initial = {1.0 / 3, 2.0 / 3};
  CHECK(determinize(f, 1024).reconstruction_error <= 1.0 / 1024);
  CHECK_THROWS_AS(determinize(f, 0), std::invalid_argument);
}

TEST_CASE("hindsight estimates on degenerate instances") {
  Rng rng(151);
  FlatMdp det = random_flat(rng, {4, 2, 4}, Dynamics::Deterministic);
  auto mc = hindsight_mc(det, 200, 5);
  CHECK(mc.estimate == doctest::Approx(plan_value_iteration(det, 1.0).value).epsilon(1e-12));
  CHECK(mc.standard_error < 1e-12);
  auto ub = det_ub_concave(det);
  CHECK(std::abs(ub.value - mc.estimate) <= ub.gap + 1e-6);

  FlatMdp one;
  one.horizon = 3;
  one.initial = {1.0};
  one.transition = {1.0};
  one.state_reward = {{0.5}, {0.25}, {1.0}};
  CHECK(hindsight_mc(one, 10, 1).estimate == doctest::Approx(1.75));
  CHECK(hindsight_mc(det, 100, 9).estimate == hindsight_mc(det, 100, 9).estimate);
}

TEST_CASE("LP listing") {
  std::ostringstream os;
  write_lp(program({1, -2}, {{1, 1}}, {1}), os);
  CHECK(os.str() == "Maximize\n obj: 1 x1 - 2 x2\nSubject To\n c0: 1 x1 + 1 x2 = 1\nBounds\n x1 >= 0\n x2 >= 0\nEnd\n");
}
