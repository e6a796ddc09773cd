#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace planference {

constexpr double kProbTol = 1e-12;
constexpr double kCrossTol = 1e-9;

// Thrown when an operation would exceed a caller-supplied size cap.
class CapExceeded : public std::runtime_error {
 public:
  CapExceeded(const std::string& what, double required, double cap)
      : std::runtime_error(what), required(required), cap(cap) {}
  double required;
  double cap;
};

struct Entity {
  std::string name;
  int cardinality = 2;
};

// CPT layout: parent configuration (mixed radix, first parent most
// significant), then action, then child state fastest.
struct DynamicsFactor {
  int entity = 0;
  std::vector<int> parents;
  std::vector<double> cpt;
};

struct RewardFactor {
  std::vector<int> parents;
  std::vector<double> table;
  // Empty optional means the factor is active at every step 1..T.
  std::optional<std::vector<int>> active_steps;

  bool active_at(int t) const;
};

struct FactoredMdp {
  int horizon = 1;
  int num_actions = 1;
  std::vector<Entity> entities;
  std::vector<std::vector<double>> initial;
  std::vector<DynamicsFactor> dynamics;
  std::vector<RewardFactor> rewards;

  int num_entities() const { return static_cast<int>(entities.size()); }
  int card(int i) const { return entities[i].cardinality; }
  // Number of joint configurations of the listed entities.
  std::size_t config_count(const std::vector<int>& vars) const;
};

// Mixed-radix indexing; position 0 is the most significant digit.
class StateIndexer {
 public:
  StateIndexer() = default;
  explicit StateIndexer(std::vector<int> radices);

  std::size_t size() const { return size_; }
  const std::vector<int>& radices() const { return radices_; }
  std::size_t encode(const std::vector<int>& digits) const;
  std::vector<int> decode(std::size_t index) const;
  void decode(std::size_t index, std::vector<int>& out) const;

 private:
  std::vector<int> radices_;
  std::vector<std::size_t> strides_;
  std::size_t size_ = 1;
};

// Enumerated-state view. Transition index: (x * A + a) * S + x'.
// state_reward[t][x] holds R_{t+1}(x) for t = 0..T-1.
// transition_reward[t][(x * A + a) * S + x'] holds R_{t+1}(x, a, x') for
// t = 0..T-2. The flag records which of the two is populated.
struct FlatMdp {
  int num_states = 1;
  int num_actions = 1;
  int horizon = 1;
  std::vector<double> initial;
  std::vector<double> transition;
  std::vector<std::vector<double>> state_reward;
  std::vector<std::vector<double>> transition_reward;
  bool has_transition_reward = false;

  std::size_t tindex(int x, int a, int xn) const {
    return (static_cast<std::size_t>(x) * num_actions + a) * num_states + xn;
  }
  double p(int x, int a, int xn) const { return transition[tindex(x, a, xn)]; }
  // Reward for being in x at (1-based) step t; zero when not populated.
  double r_state(int t, int x) const;
  // Reward for the transition taken at (1-based) step t; zero when not populated.
  double r_trans(int t, int x, int a, int xn) const;
};

struct Violation {
  std::string where;
  std::string what;
  double magnitude = 0.0;
};

std::vector<Violation> validate(const FactoredMdp& mdp);
std::vector<Violation> validate(const FlatMdp& flat);
// Throws std::invalid_argument listing the first few violations.
void require_valid(const FactoredMdp& mdp);

// Index of a parent configuration given the full joint state.
std::size_t parent_config(const FactoredMdp& mdp, const std::vector<int>& parents,
                          const std::vector<int>& state);

double transition_prob(const FactoredMdp& mdp, int entity, std::size_t pa_cfg, int action,
                       int child);

FlatMdp flatten(const FactoredMdp& mdp, std::size_t cap = 1u << 20);

// Total reward of all factors active at (1-based) step t in joint state.
double step_reward(const FactoredMdp& mdp, int t, const std::vector<int>& state);

double normalized_entropy(const FactoredMdp& mdp);
// Flat counterpart: joint row entropies over N_a * |X| * log|X|.
double normalized_entropy(const FlatMdp& flat);

struct RewardNormalization {
  FactoredMdp mdp;
  double scale = 1.0;
  // original table value = scale * normalized value + offsets[r]
  std::vector<double> offsets;
  bool degenerate = false;
};

RewardNormalization normalize_rewards(const FactoredMdp& mdp);

// Sub-problem starting at global step `start` from a known joint state,
// truncated to `horizon` steps. Reward steps are shifted accordingly.
FactoredMdp truncated_view(const FactoredMdp& mdp, const std::vector<int>& state, int start,
                           int horizon);

}  // namespace planference
