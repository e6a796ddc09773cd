#pragma once

#include <functional>
#include <vector>

#include "planference/polytope.hpp"

namespace planference {

// Concave maximization over a polytope reachable only through a linear
// maximization oracle.
struct FwObjective {
  std::function<double(const std::vector<double>&)> value;
  std::function<void(const std::vector<double>&, std::vector<double>&)> gradient;
  // Returns a vertex maximizing g . v.
  std::function<std::vector<double>(const std::vector<double>&)> lmo;
};

// Pairwise Frank-Wolfe with exact line search. x0 must lie in the polytope;
// it is kept as the first atom of the active set.
FwReport pairwise_frank_wolfe(const FwObjective& obj, const std::vector<double>& x0, const FwOptions& opts);

}  // namespace planference
