#include "planference/mdpio.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace planference {

using nlohmann::json;

namespace {

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

int line_of(const std::string& text, std::size_t byte) {
  int line = 1;
  for (std::size_t k = 0; k < byte && k < text.size(); ++k)
    if (text[k] == '\n') ++line;
  return line;
}

[[noreturn]] void schema_fail(const std::string& field, const std::string& msg) {
  throw ParseError("schema error at " + field + ": " + msg, 0, field);
}

void check_keys(const json& obj, const std::string& field, const std::set<std::string>& allowed,
                const std::set<std::string>& required, bool strict) {
  if (!obj.is_object()) schema_fail(field, "expected an object");
  for (const auto& [key, _] : obj.items()) {
    if (strict && !allowed.count(key)) schema_fail(field + "." + key, "unknown key");
  }
  for (const auto& key : required)
    if (!obj.contains(key)) schema_fail(field + "." + key, "missing key");
}

int get_int(const json& v, const std::string& field) {
  if (!v.is_number_integer()) schema_fail(field, "expected an integer");
  return v.get<int>();
}

double get_double(const json& v, const std::string& field) {
  if (!v.is_number()) schema_fail(field, "expected a number");
  return v.get<double>();
}

std::vector<double> get_doubles(const json& v, const std::string& field) {
  if (!v.is_array()) schema_fail(field, "expected an array of numbers");
  std::vector<double> out;
  out.reserve(v.size());
  for (std::size_t k = 0; k < v.size(); ++k) out.push_back(get_double(v[k], field + "[" + std::to_string(k) + "]"));
  return out;
}

std::vector<int> get_ints(const json& v, const std::string& field) {
  if (!v.is_array()) schema_fail(field, "expected an array of integers");
  std::vector<int> out;
  for (std::size_t k = 0; k < v.size(); ++k) out.push_back(get_int(v[k], field + "[" + std::to_string(k) + "]"));
  return out;
}

void write_doubles(std::ostream& os, const std::vector<double>& v) {
  os << '[';
  for (std::size_t k = 0; k < v.size(); ++k) os << (k ? ", " : "") << fmt17(v[k]);
  os << ']';
}

void write_ints(std::ostream& os, const std::vector<int>& v) {
  os << '[';
  for (std::size_t k = 0; k < v.size(); ++k) os << (k ? ", " : "") << v[k];
  os << ']';
}

}  // namespace

FactoredMdp parse_mdp(const std::string& text, bool strict) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    int line = line_of(text, e.byte);
    throw ParseError("syntax error at line " + std::to_string(line) + ": " + e.what(), line, "");
  }
  check_keys(doc, "$", {"format_version", "horizon", "num_actions", "entities", "initial", "dynamics", "rewards"},
             {"format_version", "horizon", "num_actions", "entities", "initial", "dynamics", "rewards"}, strict);
  int version = get_int(doc["format_version"], "$.format_version");
  if (version != kFormatVersion) schema_fail("$.format_version", "unsupported version " + std::to_string(version));

  FactoredMdp mdp;
  mdp.horizon = get_int(doc["horizon"], "$.horizon");
  mdp.num_actions = get_int(doc["num_actions"], "$.num_actions");

  const json& ents = doc["entities"];
  if (!ents.is_array()) schema_fail("$.entities", "expected an array");
  for (std::size_t i = 0; i < ents.size(); ++i) {
    std::string field = "$.entities[" + std::to_string(i) + "]";
    check_keys(ents[i], field, {"name", "cardinality"}, {"cardinality"}, strict);
    Entity e;
    e.cardinality = get_int(ents[i]["cardinality"], field + ".cardinality");
    if (ents[i].contains("name")) {
      if (!ents[i]["name"].is_string()) schema_fail(field + ".name", "expected a string");
      e.name = ents[i]["name"].get<std::string>();
    } else {
      e.name = "x" + std::to_string(i);
    }
    mdp.entities.push_back(e);
  }

  const json& init = doc["initial"];
  if (!init.is_array()) schema_fail("$.initial", "expected an array");
  for (std::size_t i = 0; i < init.size(); ++i) {
    std::string field = "$.initial[" + std::to_string(i) + "]";
    auto v = get_doubles(init[i], field);
    if (i < mdp.entities.size() && static_cast<int>(v.size()) != mdp.entities[i].cardinality)
      schema_fail(field, "length " + std::to_string(v.size()) + " differs from cardinality");
    mdp.initial.push_back(std::move(v));
  }

  const json& dyn = doc["dynamics"];
  if (!dyn.is_array()) schema_fail("$.dynamics", "expected an array");
  for (std::size_t f = 0; f < dyn.size(); ++f) {
    std::string field = "$.dynamics[" + std::to_string(f) + "]";
    check_keys(dyn[f], field, {"entity", "parents", "cpt"}, {"entity", "parents", "cpt"}, strict);
    DynamicsFactor d;
    d.entity = get_int(dyn[f]["entity"], field + ".entity");
    d.parents = get_ints(dyn[f]["parents"], field + ".parents");
    d.cpt = get_doubles(dyn[f]["cpt"], field + ".cpt");
    const int ne = static_cast<int>(mdp.entities.size());
    bool indices_ok = d.entity >= 0 && d.entity < ne;
    for (int p : d.parents) indices_ok = indices_ok && p >= 0 && p < ne;
    if (indices_ok) {
      std::size_t expect = mdp.config_count(d.parents) * mdp.num_actions * mdp.card(d.entity);
      if (d.cpt.size() != expect)
        schema_fail(field + ".cpt", "length " + std::to_string(d.cpt.size()) + " expected " + std::to_string(expect));
    }
    mdp.dynamics.push_back(std::move(d));
  }

  const json& rew = doc["rewards"];
  if (!rew.is_array()) schema_fail("$.rewards", "expected an array");
  for (std::size_t r = 0; r < rew.size(); ++r) {
    std::string field = "$.rewards[" + std::to_string(r) + "]";
    check_keys(rew[r], field, {"parents", "table", "active_steps"}, {"parents", "table"}, strict);
    RewardFactor rf;
    rf.parents = get_ints(rew[r]["parents"], field + ".parents");
    rf.table = get_doubles(rew[r]["table"], field + ".table");
    if (rew[r].contains("active_steps")) {
      const json& s = rew[r]["active_steps"];
      if (s.is_string()) {
        if (s.get<std::string>() != "all") schema_fail(field + ".active_steps", "expected \"all\" or a list");
      } else {
        rf.active_steps = get_ints(s, field + ".active_steps");
      }
    }
    mdp.rewards.push_back(std::move(rf));
  }

  auto violations = validate(mdp);
  if (!violations.empty()) {
    const auto& v = violations.front();
    throw ParseError("validation failed: " + v.where + ": " + v.what + " (" + fmt17(v.magnitude) + ")" +
                         (violations.size() > 1 ? " and " + std::to_string(violations.size() - 1) + " more" : ""),
                     0, "validation");
  }
  return mdp;
}

std::string serialize_mdp(const FactoredMdp& mdp) {
  std::ostringstream os;
  os << "{\n";
  os << "  \"format_version\": " << kFormatVersion << ",\n";
  os << "  \"horizon\": " << mdp.horizon << ",\n";
  os << "  \"num_actions\": " << mdp.num_actions << ",\n";
  os << "  \"entities\": [";
  for (std::size_t i = 0; i < mdp.entities.size(); ++i)
    os << (i ? "," : "") << "\n    {\"name\": " << json(mdp.entities[i].name).dump()
       << ", \"cardinality\": " << mdp.entities[i].cardinality << "}";
  os << (mdp.entities.empty() ? "" : "\n  ") << "],\n";
  os << "  \"initial\": [";
  for (std::size_t i = 0; i < mdp.initial.size(); ++i) {
    os << (i ? "," : "") << "\n    ";
    write_doubles(os, mdp.initial[i]);
  }
  os << (mdp.initial.empty() ? "" : "\n  ") << "],\n";
  os << "  \"dynamics\": [";
  for (std::size_t f = 0; f < mdp.dynamics.size(); ++f) {
    const auto& d = mdp.dynamics[f];
    os << (f ? "," : "") << "\n    {\"entity\": " << d.entity << ", \"parents\": ";
    write_ints(os, d.parents);
    os << ", \"cpt\": ";
    write_doubles(os, d.cpt);
    os << "}";
  }
  os << (mdp.dynamics.empty() ? "" : "\n  ") << "],\n";
  os << "  \"rewards\": [";
  for (std::size_t r = 0; r < mdp.rewards.size(); ++r) {
    const auto& rf = mdp.rewards[r];
    os << (r ? "," : "") << "\n    {\"parents\": ";
    write_ints(os, rf.parents);
    os << ", \"table\": ";
    write_doubles(os, rf.table);
    os << ", \"active_steps\": ";
    if (rf.active_steps)
      write_ints(os, *rf.active_steps);
    else
      os << "\"all\"";
    os << "}";
  }
  os << (mdp.rewards.empty() ? "" : "\n  ") << "]\n";
  os << "}\n";
  return os.str();
}

FactoredMdp load_mdp(const std::string& path, bool strict) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path, path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_mdp(ss.str(), strict);
}

void save_mdp(const FactoredMdp& mdp, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path, path);
  out << serialize_mdp(mdp);
  if (!out) throw IoError("write failed for " + path, path);
}

const std::vector<Method>& all_methods() {
  static const std::vector<Method> methods = {
      Method::PlanningVi, Method::Marginal, Method::MarginalU, Method::Map,   Method::Mmap,
      Method::Vbp,        Method::MaxentVbp, Method::ViLp,     Method::ViCvx, Method::DetMc,
      Method::DetUb,      Method::ConformantExhaustive, Method::Random};
  return methods;
}

std::string method_name(Method m) {
  switch (m) {
    case Method::PlanningVi: return "planning-vi";
    case Method::Marginal: return "marginal";
    case Method::MarginalU: return "marginal-u";
    case Method::Map: return "map";
    case Method::Mmap: return "mmap";
    case Method::Vbp: return "vbp";
    case Method::MaxentVbp: return "maxent-vbp";
    case Method::ViLp: return "vi-lp";
    case Method::ViCvx: return "vi-cvx";
    case Method::DetMc: return "det-mc";
    case Method::DetUb: return "det-ub";
    case Method::ConformantExhaustive: return "conformant-exhaustive";
    case Method::Random: return "random";
  }
  return "unknown";
}

Method parse_method(const std::string& name) {
  for (Method m : all_methods())
    if (method_name(m) == name) return m;
  throw std::invalid_argument("unknown method '" + name + "'");
}

std::string format_decimal(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

std::string results_header() {
  return "method,lambda,instance,h_mdp,value,exact_value,first_action,advantage,iterations,converged,wall_ms";
}

std::string format_result(const ResultRow& row) {
  std::ostringstream os;
  os << method_name(row.method) << ',' << format_decimal(row.lambda) << ',' << row.instance << ','
     << format_decimal(row.h_mdp) << ',' << format_decimal(row.value) << ','
     << (row.exact_value ? format_decimal(*row.exact_value) : "") << ',' << row.first_action << ','
     << (row.advantage ? format_decimal(*row.advantage) : "") << ',' << row.iterations << ','
     << (row.converged ? 1 : 0) << ',' << (row.wall_ms ? format_decimal(*row.wall_ms) : "");
  return os.str();
}

void write_results(const std::vector<ResultRow>& rows, std::ostream& os) {
  os << results_header() << '\n';
  for (const auto& r : rows) os << format_result(r) << '\n';
}

void write_results(const std::vector<ResultRow>& rows, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write results to " + path, path);
  write_results(rows, out);
  out.flush();
  if (!out) throw IoError("write failed for " + path, path);
}

std::vector<ResultRow> read_results(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != results_header()) throw ParseError("missing results header", 1, "header");
  std::vector<ResultRow> rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::size_t start = 0;
    while (true) {
      std::size_t comma = line.find(',', start);
      cells.push_back(line.substr(start, comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (cells.size() != 11) throw ParseError("expected 11 columns", lineno, "row");
    ResultRow r;
    try {
      r.method = parse_method(cells[0]);
      r.lambda = std::stod(cells[1]);
      r.instance = cells[2];
      r.h_mdp = std::stod(cells[3]);
      r.value = std::stod(cells[4]);
      if (!cells[5].empty()) r.exact_value = std::stod(cells[5]);
      r.first_action = std::stoi(cells[6]);
      if (!cells[7].empty()) r.advantage = std::stod(cells[7]);
      r.iterations = std::stol(cells[8]);
      r.converged = cells[9] == "1";
      if (!cells[10].empty()) r.wall_ms = std::stod(cells[10]);
    } catch (const std::logic_error& e) {
      throw ParseError(std::string("bad field: ") + e.what(), lineno, "row");
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace planference
