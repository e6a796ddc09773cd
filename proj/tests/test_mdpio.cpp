#include <doctest.h>

#include <sstream>

#include "planference/domains.hpp"
#include "planference/mdpio.hpp"
#include "support.hpp"

using namespace planference;

namespace {

const char* kMinimal = R"({
  "format_version": 1,
  "horizon": 2,
  "num_actions": 1,
  "entities": [{"name": "x", "cardinality": 2}],
  "initial": [[1.0, 0.0]],
  "dynamics": [{"entity": 0, "parents": [0], "cpt": [0.25, 0.75, 0.0, 1.0]}],
  "rewards": [{"parents": [0], "table": [0.0, 1.0], "active_steps": [2]}]
})";

}  // namespace

TEST_CASE("minimal one-entity document") {
  FactoredMdp m = parse_mdp(kMinimal);
  CHECK(m.num_entities() == 1);
  CHECK(m.horizon == 2);
  CHECK(m.dynamics[0].cpt[1] == 0.75);
  CHECK(*m.rewards[0].active_steps == std::vector<int>{2});
}

TEST_CASE("schema and strictness errors") {
  std::string wrong_len = kMinimal;
  wrong_len.replace(wrong_len.find("0.0, 1.0]}]"), 11, "1.0]}]");
  try {
    parse_mdp(wrong_len);
    FAIL("expected a schema error");
  } catch (const ParseError& e) {
    CHECK(e.field == "$.dynamics[0].cpt");
  }

  std::string typo = kMinimal;
  typo.replace(typo.find("\"table\""), 7, "\"tabel\"");
  CHECK_THROWS_AS(parse_mdp(typo), ParseError);

  std::string extra = kMinimal;
  extra.replace(extra.find("\"horizon\""), 9, "\"comment\": \"hi\", \"horizon\"");
  CHECK_THROWS_AS(parse_mdp(extra), ParseError);
  CHECK(parse_mdp(extra, false).horizon == 2);

  std::string bad_row = kMinimal;
  bad_row.replace(bad_row.find("0.25"), 4, "0.35");
  try {
    parse_mdp(bad_row);
    FAIL("expected a validation error");
  } catch (const ParseError& e) {
    CHECK(e.field == "validation");
  }

  try {
    parse_mdp("{\n  \"horizon\": ,\n}");
    FAIL("expected a syntax error");
  } catch (const ParseError& e) {
    CHECK(e.line == 2);
  }
}

TEST_CASE("round trip is bit exact on generated documents") {
  for (int k = 0; k < 20; ++k) {
    SyntheticSpec spec;
    spec.target_entropy = 0.05 + 0.045 * k;
    spec.seed = 1000 + k;
    FactoredMdp m = generate_synthetic(spec);
    const std::string text = serialize_mdp(m);
    FactoredMdp back = parse_mdp(text);
    CHECK(serialize_mdp(back) == text);
    for (int i = 0; i < m.num_entities(); ++i) CHECK(back.dynamics[i].cpt == m.dynamics[i].cpt);
    CHECK(back.rewards[0].table == m.rewards[0].table);
  }
}

TEST_CASE("serialization is deterministic and keeps awkward doubles") {
  testsupport::Rng rng(3);
  FactoredMdp m = testsupport::random_factored(rng, {3, 3, 2, 3, 2});
  m.rewards[0].table[0] = 0.1 + 0.2;
  m.rewards[0].table[1] = -1e-300;
  CHECK(serialize_mdp(m) == serialize_mdp(m));
  FactoredMdp back = parse_mdp(serialize_mdp(m));
  CHECK(back.rewards[0].table == m.rewards[0].table);
  CHECK(!back.rewards[0].active_steps);
}

TEST_CASE("results CSV") {
  std::ostringstream empty;
  write_results({}, empty);
  CHECK(empty.str() == results_header() + "\n");

  ResultRow r;
  r.method = Method::Vbp;
  r.lambda = 0.3;
  r.instance = "h0.50-0001";
  r.h_mdp = 0.5;
  r.value = 1.0 / 3.0;
  r.exact_value = 0.3;
  r.first_action = 1;
  r.advantage = -0.0125;
  r.iterations = 17;
  r.converged = false;
  std::ostringstream one;
  write_results({r}, one);
  const std::string text = one.str();
  CHECK(std::count(text.begin(), text.end(), '\n') == 2);
  CHECK(text.find("vbp,0.3,h0.50-0001,0.5,0.333333333333,0.3,1,-0.0125,17,0,\n") != std::string::npos);

  testsupport::Rng rng(8);
  std::vector<ResultRow> rows;
  for (int k = 0; k < 100; ++k) {
    ResultRow x;
    x.method = all_methods()[k % all_methods().size()];
    x.lambda = testsupport::uniform(rng);
    x.instance = "i" + std::to_string(k);
    x.value = testsupport::uniform(rng) * 100 - 50;
    if (k % 3) x.exact_value = testsupport::uniform(rng);
    if (k % 4) x.advantage = -testsupport::uniform(rng);
    x.wall_ms = k % 5 ? std::optional<double>(k * 1.5) : std::nullopt;
    x.first_action = k % 3 - 1;
    x.iterations = k;
    x.converged = k % 2;
    rows.push_back(x);
  }
  std::ostringstream os;
  write_results(rows, os);
  auto back = read_results(os.str());
  REQUIRE(back.size() == rows.size());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    CHECK(back[k].method == rows[k].method);
    CHECK(back[k].value == doctest::Approx(rows[k].value).epsilon(1e-11));
    CHECK(back[k].exact_value.has_value() == rows[k].exact_value.has_value());
    CHECK(back[k].advantage.has_value() == rows[k].advantage.has_value());
    CHECK(back[k].wall_ms.has_value() == rows[k].wall_ms.has_value());
    CHECK(back[k].first_action == rows[k].first_action);
    CHECK(back[k].converged == rows[k].converged);
  }
}

TEST_CASE("method registry") {
  CHECK(all_methods().size() == 13);
  for (Method m : all_methods()) CHECK(parse_method(method_name(m)) == m);
  CHECK_THROWS_AS(parse_method("sogbofa"), std::invalid_argument);
}

TEST_CASE("missing file is an I/O error naming the path") {
  try {
    load_mdp("/nonexistent/dir/x.json");
    FAIL("expected IoError");
  } catch (const IoError& e) {
    CHECK(e.path == "/nonexistent/dir/x.json");
  }
}
