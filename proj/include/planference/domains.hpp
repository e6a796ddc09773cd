#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

#include "planference/model.hpp"

namespace planference {

struct SyntheticSpec {
  int num_entities = 3;
  int num_states = 2;
  int num_actions = 2;
  int horizon = 4;
  int parents_per_entity = 2;
  double target_entropy = 0.5;
  std::uint64_t seed = 0;
  // Explicit parent sets; default is the ring {i, i+1, ...} mod N_e.
  std::optional<std::vector<std::vector<int>>> parents;
};

// Raised when the target entropy lies outside the range reachable with
// exponents in [kMinExponent, kMaxExponent].
class UnreachableTarget : public std::runtime_error {
 public:
  UnreachableTarget(const std::string& what, double lo, double hi)
      : std::runtime_error(what), achievable_lo(lo), achievable_hi(hi) {}
  double achievable_lo;
  double achievable_hi;
};

constexpr double kMinExponent = 1e-6;
constexpr double kMaxExponent = 1e3;

struct SyntheticInstance {
  FactoredMdp mdp;
  double exponent = 1.0;
  double achieved_entropy = 0.0;
};

SyntheticInstance generate_synthetic_instance(const SyntheticSpec& spec);
FactoredMdp generate_synthetic(const SyntheticSpec& spec);

// Two-entity environment where a knob entity trades controllability of the
// location entity against the final reward.
FactoredMdp build_reactivity_env();

}  // namespace planference
