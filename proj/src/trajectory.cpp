#include "ope/trajectory.hpp"

#include <sstream>

#include "ope/common.hpp"

namespace ope {

std::string to_string(EnvironmentKind kind) {
  switch (kind) {
    case EnvironmentKind::bandit: return "bandit";
    case EnvironmentKind::tabular: return "tabular";
    case EnvironmentKind::cartpole: return "cartpole";
  }
  return "unknown";
}

EnvironmentKind parse_environment_kind(const std::string& name) {
  if (name == "bandit") return EnvironmentKind::bandit;
  if (name == "tabular") return EnvironmentKind::tabular;
  if (name == "cartpole") return EnvironmentKind::cartpole;
  throw ValidationError("unknown environment kind '" + name + "'");
}

Trajectory::Trajectory(std::size_t horizon, std::size_t dim)
    : state_dim(dim), states((horizon + 1) * dim, 0.0), actions(horizon + 1, kNullAction),
      rewards(horizon + 1, 0.0) {}

double Trajectory::discounted_return(double gamma) const {
  double g = 0.0, discount = 1.0;
  for (double r : rewards) {
    g += discount * r;
    discount *= gamma;
  }
  return g;
}

void Dataset::validate() const {
  if (trajectories.empty()) throw ValidationError("dataset is empty");
  const std::size_t T = horizon();
  for (std::size_t i = 0; i < trajectories.size(); ++i) {
    const Trajectory& tr = trajectories[i];
    if (tr.actions.size() != T + 1 || tr.rewards.size() != T + 1 ||
        tr.states.size() != (T + 1) * state_dim || tr.state_dim != state_dim) {
      std::ostringstream os;
      os << "trajectory " << i << " does not match the dataset horizon " << T << " / state dimension "
         << state_dim;
      throw ValidationError(os.str());
    }
    for (int a : tr.actions) {
      if (a != kNullAction && (a < 0 || static_cast<std::size_t>(a) >= num_actions)) {
        std::ostringstream os;
        os << "trajectory " << i << " has out-of-range action " << a;
        throw ValidationError(os.str());
      }
    }
  }
  if (!seeds.empty() && seeds.size() != trajectories.size())
    throw ValidationError("seed record does not match the number of trajectories");
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out;
  out.kind = kind;
  out.state_dim = state_dim;
  out.num_states = num_states;
  out.num_actions = num_actions;
  out.reward_bound = reward_bound;
  out.root_seed = root_seed;
  out.trajectories.reserve(indices.size());
  for (std::size_t i : indices) {
    out.trajectories.push_back(trajectories.at(i));
    if (!seeds.empty()) out.seeds.push_back(seeds[i]);
  }
  return out;
}

}  // namespace ope
