#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace ope {

enum class EnvironmentKind { bandit, tabular, cartpole };

std::string to_string(EnvironmentKind kind);
EnvironmentKind parse_environment_kind(const std::string& name);

/// One episode (S_0, A_0, R_0, ..., S_T, A_T, R_T). States are stored as a
/// flat row-major block of `state_dim` doubles per step; finite state spaces
/// use state_dim = 1 and store the index.
struct Trajectory {
  std::size_t state_dim = 1;
  std::vector<double> states;
  std::vector<int> actions;
  std::vector<double> rewards;

  Trajectory() = default;
  Trajectory(std::size_t horizon, std::size_t state_dim);

  std::size_t length() const { return actions.size(); }
  std::size_t horizon() const { return actions.size() - 1; }

  std::span<const double> state(std::size_t t) const {
    return {states.data() + t * state_dim, state_dim};
  }
  std::span<double> state(std::size_t t) {
    return {states.data() + t * state_dim, state_dim};
  }
  int discrete_state(std::size_t t) const { return static_cast<int>(states[t * state_dim]); }

  /// G_T = sum_t gamma^t R_t.
  double discounted_return(double gamma) const;

  bool operator==(const Trajectory&) const = default;
};

/// n independent trajectories sharing one horizon, plus what is needed to
/// regenerate them.
struct Dataset {
  EnvironmentKind kind = EnvironmentKind::tabular;
  std::size_t state_dim = 1;
  std::size_t num_states = 0;  // 0 for continuous state spaces
  std::size_t num_actions = 0;
  double reward_bound = 0.0;   // recorded R_max of the generating environment
  std::uint64_t root_seed = 0;
  std::vector<std::uint64_t> seeds;  // per-trajectory substream seeds
  std::vector<Trajectory> trajectories;

  std::size_t size() const { return trajectories.size(); }
  bool empty() const { return trajectories.empty(); }
  std::size_t horizon() const { return trajectories.empty() ? 0 : trajectories.front().horizon(); }
  const Trajectory& operator[](std::size_t i) const { return trajectories[i]; }

  /// Checks the shared-horizon, sequence-length and action-range invariants.
  /// reward_bound is a recorded diagnostic, not enforced: Gaussian reward
  /// noise is unbounded.
  void validate() const;

  /// Returns the trajectories selected by `indices` (duplicates allowed), as
  /// used by the bootstrap.
  Dataset subset(std::span<const std::size_t> indices) const;

  bool operator==(const Dataset&) const = default;
};

}  // namespace ope
