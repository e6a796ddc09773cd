#pragma once

#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "planference/model.hpp"

namespace planference {

constexpr int kFormatVersion = 1;

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& msg, int line, std::string field)
      : std::runtime_error(msg), line(line), field(std::move(field)) {}
  int line;  // 0 when unknown
  std::string field;
};

class IoError : public std::runtime_error {
 public:
  IoError(const std::string& msg, std::string path) : std::runtime_error(msg), path(std::move(path)) {}
  std::string path;
};

// Parses an MDP document. With strict set, unknown keys are rejected.
// Validation violations are reported as ParseError with field "validation".
FactoredMdp parse_mdp(const std::string& text, bool strict = true);
std::string serialize_mdp(const FactoredMdp& mdp);

FactoredMdp load_mdp(const std::string& path, bool strict = true);
void save_mdp(const FactoredMdp& mdp, const std::string& path);

enum class Method {
  PlanningVi,
  Marginal,
  MarginalU,
  Map,
  Mmap,
  Vbp,
  MaxentVbp,
  ViLp,
  ViCvx,
  DetMc,
  DetUb,
  ConformantExhaustive,
  Random,
};

const std::vector<Method>& all_methods();
std::string method_name(Method m);
Method parse_method(const std::string& name);

struct ResultRow {
  Method method = Method::PlanningVi;
  double lambda = 0.0;
  std::string instance;
  double h_mdp = 0.0;
  double value = 0.0;
  std::optional<double> exact_value;
  int first_action = 0;
  std::optional<double> advantage;
  long iterations = 0;
  bool converged = true;
  std::optional<double> wall_ms;
};

std::string results_header();
std::string format_result(const ResultRow& row);
void write_results(const std::vector<ResultRow>& rows, std::ostream& os);
void write_results(const std::vector<ResultRow>& rows, const std::string& path);
std::vector<ResultRow> read_results(const std::string& text);

// 12 significant digits, as used for every decimal column.
std::string format_decimal(double v);

}  // namespace planference
