#include <doctest.h>

#include <cmath>
#include <sstream>

#include "lbp_reference.hpp"
#include "planference/domains.hpp"
#include "planference/oracle.hpp"
#include "planference/vbp.hpp"
#include "support.hpp"

using namespace planference;
using namespace testsupport;

namespace {

VbpConfig exact_config(double lambda) {
  VbpConfig c;
  c.lambda = lambda;
  c.epsilon = EpsilonSchedule::constant(1e-10);
  return c;
}

double max_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) d = std::max(d, std::abs(a[k] - b[k]));
  return d;
}

}  // namespace

TEST_CASE("graph of a single entity over two steps") {
  Rng rng(1);
  FactoredMdp m = wrap_flat(random_flat(rng, {3, 2, 2}));
  auto g = build_graph(m);
  CHECK(g.num_variables() == 2);
  CHECK(g.num_action_nodes() == 1);
  CHECK(g.num_dynamics_factors() == 1);
  CHECK(g.num_reward_factors() == 2);
  CHECK(g.slice_factors[0].size() == 2);
  CHECK(g.slice_factors[1].size() == 1);
  CHECK(g.factors[g.dynamics_factor(1, 0)].kind == GraphFactor::Kind::Dynamics);
}

TEST_CASE("graph of the reactivity environment") {
  auto g = build_graph(build_reactivity_env());
  CHECK(g.num_variables() == 14);
  CHECK(g.num_action_nodes() == 6);
  CHECK(g.num_dynamics_factors() == 12);
  CHECK(g.num_reward_factors() == 1);
  const auto& f = g.factors[g.dynamics_factor(3, 0)];
  CHECK(f.num_configs == 36);
  CHECK(f.digit(7, 0) == 1);
  CHECK(f.digit(7, 1) == 1);
  // x^(0)_t feeds the location dynamics and the knob-independent location factor only.
  CHECK(g.variable_links[g.var_id(2, 0)].size() == 1);
  CHECK(g.variable_links[g.var_id(2, 1)].size() == 2);
}

TEST_CASE("message initialization") {
  Rng rng(2);
  FactoredMdp m = random_factored(rng, {});
  VbpEngine e(m, exact_config(0.7));
  const auto& s = e.messages();
  for (int x = 0; x < 2; ++x) CHECK(s.lmf_var[e.graph().var_id(1, 1)][x] == std::log(m.initial[1][x]));
  CHECK(s.lmf_var[e.graph().var_id(2, 1)] == std::vector<double>{0.0, 0.0});
  const int rf = e.graph().slice_factors[0].back();
  CHECK(s.factors[rf].lmb_pa[3] == doctest::Approx(0.7 * m.rewards[0].table[3]));
  CHECK(s.factors[0].lq == std::vector<double>(s.factors[0].lq.size(), 0.0));
}

TEST_CASE("epsilon schedules") {
  auto s = EpsilonSchedule::inverse_iter(0.01, 1);
  CHECK(s.at(1) == 1.0);
  CHECK(s.at(4) == 0.25);
  CHECK(s.at(1000) == 0.01);
  CHECK(EpsilonSchedule::inverse_iter(0.01, 300).at(301) == 0.5);
  CHECK(EpsilonSchedule::constant(0.3).at(17) == 0.3);
}

TEST_CASE("invalid configurations are rejected") {
  VbpConfig c;
  c.damping = 1.0;
  CHECK_THROWS_AS(c.check(), std::invalid_argument);
  VbpConfig m;
  m.family = UpdateFamily::MaxentAdditive;
  m.alpha = 0.0;
  CHECK_THROWS_AS(m.check(), std::invalid_argument);
}

TEST_CASE("single entity: smoothed updates are exact as eps vanishes") {
  Rng rng(3);
  for (int n = 0; n < 30; ++n) {
    FlatMdp f = random_flat(rng, random_shape(rng, 5, 3, 5));
    const double lambda = 0.2 + 2.0 * uniform(rng);
    VbpResult r = vbp_solve(wrap_flat(f), exact_config(lambda));
    CHECK(r.converged);
    CHECK(std::abs(r.bound - plan_value_iteration(f, lambda).value) < 1e-7);
  }
}

TEST_CASE("single entity: backward messages are the exponential-utility values") {
  Rng rng(5);
  FlatMdp f = random_flat(rng, {4, 3, 4});
  const double lambda = 1.3;
  FactoredMdp m = wrap_flat(f);
  VbpEngine e(m, exact_config(lambda));
  e.run();
  auto ref = plan_value_iteration(f, lambda);
  for (int t = 1; t <= f.horizon; ++t)
    for (int x = 0; x < 4; ++x)
      CHECK(e.messages().lmb_var[e.graph().var_id(t, 0)][x] == doctest::Approx(ref.backward[t - 1][x]).epsilon(1e-7));
}

TEST_CASE("at eps = 1 the updates are sum-product belief propagation") {
  Rng rng(7);
  for (int n = 0; n < 5; ++n) {
    FactoredMdp m = random_factored(rng, {3, 2, 2, 3, 2});
    VbpConfig c;
    c.lambda = 1.0;
    c.epsilon = EpsilonSchedule::constant(1.0);
    c.damping = 0.3;
    VbpEngine e(m, c);
    ReferenceLbp ref(m, 1.0, 0.3);
    const int T = m.horizon;
    double worst = 0.0;
    for (int it = 0; it < 20; ++it) {
      for (int t = T; t >= 1; --t) {
        e.update_timeslice(t, 1.0);
        ref.update(t);
      }
      for (int t = 1; t <= T; ++t) {
        e.update_timeslice(t, 1.0);
        ref.update(t);
      }
      for (int t = 1; t <= T; ++t)
        for (int j = 0; j < m.num_entities(); ++j) {
          const int v = e.graph().var_id(t, j);
          worst = std::max(worst, max_diff(e.messages().lmf_var[v], ref.forward(t, j)));
          worst = std::max(worst, max_diff(e.messages().lmb_var[v], ref.backward(t, j)));
        }
    }
    CHECK(worst < 1e-12);
  }
}

TEST_CASE("additive maxent backward messages are soft values") {
  Rng rng(11);
  for (int n = 0; n < 10; ++n) {
    FlatMdp f = random_flat(rng, random_shape(rng, 4, 3, 5));
    VbpConfig c;
    c.family = UpdateFamily::MaxentAdditive;
    c.alpha = 1.0;
    c.lambda = 0.0;
    FactoredMdp m = wrap_flat(f);
    VbpEngine e(m, c);
    e.run();
    auto v = soft_value_iteration(f, 1.0);
    for (int t = 1; t <= f.horizon; ++t)
      for (int x = 0; x < f.num_states; ++x)
        CHECK(std::abs(e.messages().lmb_var[e.graph().var_id(t, 0)][x] - v[t - 1][x]) < 1e-6);
  }
}

TEST_CASE("zero reward gives bound zero and uniform actions") {
  Rng rng(13);
  FactoredMdp m = random_factored(rng, {});
  for (auto& r : m.rewards) std::fill(r.table.begin(), r.table.end(), 0.0);
  VbpConfig c = exact_config(1.0);
  c.epsilon = EpsilonSchedule::constant(0.01);
  VbpResult r = vbp_solve(m, c);
  CHECK(r.converged);
  CHECK(std::abs(r.bound) < 1e-9);
  for (const auto& b : r.action_beliefs)
    for (double p : b) CHECK(p == doctest::Approx(0.5));
}

TEST_CASE("action extraction takes the first maximum") {
  VbpResult r;
  r.action_beliefs = {{0.2, 0.8}, {0.5, 0.5}, {0.1, 0.3, 0.3}};
  CHECK(extract_action(r, 1) == 1);
  CHECK(extract_action(r, 2) == 0);
  CHECK(extract_action(r, 3) == 1);
}

TEST_CASE("undamped updates leave a converged state in place") {
  Rng rng(17);
  FactoredMdp m = random_factored(rng, {3, 2, 2, 4, 2});
  VbpConfig c;
  c.lambda = 0.5;
  c.epsilon = EpsilonSchedule::constant(0.2);
  c.tolerance = 1e-12;
  VbpEngine damped(m, c);
  VbpResult r = damped.run();
  REQUIRE(r.converged);
  c.damping = 0.0;
  VbpEngine undamped(m, c);
  undamped.messages() = damped.messages();
  double change = 0.0;
  for (int t = m.horizon; t >= 1; --t) change = std::max(change, undamped.update_timeslice(t, 0.2));
  CHECK(change < 1e-8);
}

TEST_CASE("property: beliefs are normalized and bounds finite") {
  Rng rng(19);
  for (int n = 0; n < 12; ++n) {
    FactoredMdp m = random_factored(rng, {uniform_int(rng, 2, 3), uniform_int(rng, 2, 3), 2, uniform_int(rng, 2, 4), 2}, true);
    VbpConfig c;
    c.lambda = 0.5 + uniform(rng);
    VbpResult r = vbp_solve(m, c);
    CHECK(std::isfinite(r.bound));
    for (const auto& b : r.action_beliefs) {
      double s = 0.0;
      for (double p : b) s += p;
      CHECK(s == doctest::Approx(1.0));
    }
    for (const auto& b : r.variable_beliefs) {
      double s = 0.0;
      for (double p : b) s += p;
      CHECK(s == doctest::Approx(1.0));
    }
  }
}

TEST_CASE("diagnostics rows") {
  Rng rng(23);
  FactoredMdp m = random_factored(rng, {});
  std::vector<DiagnosticsRow> rows;
  VbpConfig c;
  c.max_outer = 5;
  vbp_solve(m, c, [&](const DiagnosticsRow& row) { rows.push_back(row); });
  REQUIRE(!rows.empty());
  CHECK(rows.front().iteration == 1);
  CHECK(rows.front().epsilon == 1.0);
  std::ostringstream os;
  write_diagnostics_header(os);
  write_diagnostics_row(os, rows.front());
  CHECK(os.str().rfind("iteration,epsilon,residual,bound\n1,1,", 0) == 0);
}
