#include "ope/environments.hpp"

#include <cmath>
#include <random>
#include <sstream>

#include "ope/random.hpp"

namespace ope {

namespace {

void check_distribution(const Eigen::VectorXd& v, const char* what, bool strictly_positive) {
  if (v.size() == 0) throw ValidationError(std::string(what) + " is empty");
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i]) || v[i] < 0.0 || (strictly_positive && v[i] <= 0.0)) {
      std::ostringstream os;
      os << what << " has an invalid entry " << v[i] << " at index " << i;
      throw ValidationError(os.str());
    }
  }
  if (std::abs(v.sum() - 1.0) > kProbabilityTolerance) {
    std::ostringstream os;
    os.precision(17);
    os << what << " sums to " << v.sum() << ", expected 1";
    throw ValidationError(os.str());
  }
}

double reward_noise(double sd, Rng& rng) {
  if (sd == 0.0) return 0.0;
  std::normal_distribution<double> noise(0.0, sd);
  return noise(rng);
}

void check_policy_output(std::span<const double> probs, std::size_t num_actions) {
  if (probs.size() != num_actions) throw ValidationError("policy action count does not match environment");
  check_probability_vector(probs, "behavior policy output");
}

double tabular_reward_bound(const TabularMDPSpec& spec) {
  // Gaussian noise is unbounded; record the bound of the mean plus 6 sd as
  // the diagnostic R_max.
  return spec.reward_mean.cwiseAbs().maxCoeff() + 6.0 * spec.reward_noise_sd;
}

}  // namespace

void BanditSpec::validate() const {
  check_distribution(context_probs, "context_probs", true);
  check_distribution(behavior_probs, "behavior_probs", true);
  check_distribution(target_probs, "target_probs", true);
  if (behavior_probs.size() != target_probs.size())
    throw ValidationError("behavior_probs and target_probs differ in length");
  if (reward_mean.rows() != context_probs.size() || reward_mean.cols() != behavior_probs.size())
    throw ValidationError("reward_mean must be contexts x actions");
  if (!(reward_noise_sd >= 0.0)) throw ValidationError("reward_noise_sd must be >= 0");
}

void TabularMDPSpec::validate() const {
  if (num_states == 0 || num_actions == 0) throw ValidationError("num_states and num_actions must be positive");
  if (horizon == 0) throw ValidationError("horizon must be positive");
  if (!(discount > 0.0 && discount <= 1.0)) throw ValidationError("discount must lie in (0, 1]");
  if (!(reward_noise_sd >= 0.0)) throw ValidationError("reward_noise_sd must be >= 0");
  if (transition.size() != num_actions) throw ValidationError("transition needs one matrix per action");
  const auto S = static_cast<Eigen::Index>(num_states);
  for (std::size_t a = 0; a < num_actions; ++a) {
    if (transition[a].rows() != S || transition[a].cols() != S)
      throw ValidationError("transition matrices must be states x states");
    for (Eigen::Index s = 0; s < S; ++s) {
      const Eigen::VectorXd row = transition[a].row(s).transpose();
      check_distribution(row, "transition row", false);
    }
  }
  if (reward_mean.rows() != S || reward_mean.cols() != static_cast<Eigen::Index>(num_actions))
    throw ValidationError("reward_mean must be states x actions");
  if (initial_dist.size() != S) throw ValidationError("initial_dist must have num_states entries");
  check_distribution(initial_dist, "initial_dist", false);
}

void CartPoleSpec::validate() const {
  if (horizon < 1) throw ValidationError("cartpole horizon must be >= 1");
  if (!(x_max > 0.0) || !(theta_max > 0.0)) throw ValidationError("x_max and theta_max must be positive");
  if (!(dt > 0.0) || !(cart_mass > 0.0) || !(pole_mass > 0.0) || !(pole_half_length > 0.0))
    throw ValidationError("cartpole physical constants must be positive");
  if (!(init_range >= 0.0)) throw ValidationError("init_range must be >= 0");
}

double CartPoleSpec::reward_bound() const { return 3.0 * 3.0 - 1.0; }

double cartpole_reward(const CartPoleSpec& spec, std::span<const double> s) {
  return (2.0 - s[0] / spec.x_max) * (2.0 - s[2] / spec.theta_max) - 1.0;
}

CartPoleState cartpole_step_with_force(const CartPoleSpec& spec, std::span<const double> s,
                                       double force) {
  const double x = s[0], x_dot = s[1], theta = s[2], theta_dot = s[3];
  const double cos_t = std::cos(theta), sin_t = std::sin(theta);
  const double total_mass = spec.cart_mass + spec.pole_mass;
  const double pole_mass_length = spec.pole_mass * spec.pole_half_length;
  const double temp = (force + pole_mass_length * theta_dot * theta_dot * sin_t) / total_mass;
  const double theta_acc = (spec.gravity * sin_t - cos_t * temp) /
                           (spec.pole_half_length * (4.0 / 3.0 - spec.pole_mass * cos_t * cos_t / total_mass));
  const double x_acc = temp - pole_mass_length * theta_acc * cos_t / total_mass;
  return {x + spec.dt * x_dot, x_dot + spec.dt * x_acc, theta + spec.dt * theta_dot,
          theta_dot + spec.dt * theta_acc};
}

CartPoleState cartpole_step(const CartPoleSpec& spec, std::span<const double> state, int action) {
  const double force = action == 1 ? spec.force_magnitude : -spec.force_magnitude;
  return cartpole_step_with_force(spec, state, force);
}

bool cartpole_out_of_bounds(const CartPoleSpec& spec, std::span<const double> s) {
  return std::abs(s[0]) > spec.x_max || std::abs(s[2]) > spec.theta_max;
}

Dataset sample_bandit_dataset_under(const BanditSpec& spec, const Eigen::VectorXd& action_probs,
                                    std::size_t n, std::uint64_t seed) {
  spec.validate();
  if (n == 0) throw ValidationError("n must be >= 1");
  check_distribution(action_probs, "action distribution", false);
  Dataset data;
  data.kind = EnvironmentKind::bandit;
  data.state_dim = 1;
  data.num_states = spec.num_contexts();
  data.num_actions = spec.num_actions();
  data.reward_bound = spec.reward_mean.cwiseAbs().maxCoeff() + 6.0 * spec.reward_noise_sd;
  data.root_seed = seed;
  data.seeds.resize(n);
  data.trajectories.resize(n);
  const std::span<const double> ctx(spec.context_probs.data(), spec.num_contexts());
  const std::span<const double> act(action_probs.data(), static_cast<std::size_t>(action_probs.size()));
  for (std::size_t i = 0; i < n; ++i) {
    data.seeds[i] = substream_seed(seed, i);
    Rng rng = make_rng(data.seeds[i]);
    Trajectory traj(0, 1);
    const int s = sample_categorical(ctx, rng);
    const int a = sample_categorical(act, rng);
    traj.states[0] = s;
    traj.actions[0] = a;
    traj.rewards[0] = spec.reward_mean(s, a) + reward_noise(spec.reward_noise_sd, rng);
    data.trajectories[i] = std::move(traj);
  }
  return data;
}

Dataset sample_bandit_dataset(const BanditSpec& spec, std::size_t n, std::uint64_t seed) {
  spec.validate();
  return sample_bandit_dataset_under(spec, spec.behavior_probs, n, seed);
}

static int sample_row(const Eigen::MatrixXd& P, int s, Rng& rng) {
  const double u = uniform01(rng);
  double acc = 0.0;
  const Eigen::Index last = P.cols() - 1;
  for (Eigen::Index j = 0; j < last; ++j) {
    acc += P(s, j);
    if (u < acc) return static_cast<int>(j);
  }
  return static_cast<int>(last);
}

Trajectory sample_trajectory(const TabularMDPSpec& spec, const Policy& behavior, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  Trajectory traj(spec.horizon, 1);
  std::vector<double> probs(spec.num_actions);
  const std::span<const double> init(spec.initial_dist.data(), spec.num_states);
  int s = sample_categorical(init, rng);
  for (std::size_t t = 0; t <= spec.horizon; ++t) {
    traj.states[t] = s;
    behavior.probabilities(HistoryWindow(traj, t, behavior.history_length()), probs);
    check_policy_output(probs, spec.num_actions);
    const int a = sample_categorical(probs, rng);
    traj.actions[t] = a;
    traj.rewards[t] = spec.reward_mean(s, a) + reward_noise(spec.reward_noise_sd, rng);
    if (t < spec.horizon) s = sample_row(spec.transition[static_cast<std::size_t>(a)], s, rng);
  }
  return traj;
}

Trajectory sample_trajectory(const CartPoleSpec& spec, const Policy& behavior, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  Trajectory traj(spec.horizon, 4);
  std::vector<double> probs(2);
  std::uniform_real_distribution<double> init(-spec.init_range, spec.init_range);
  CartPoleState s{};
  for (double& v : s) v = init(rng);
  bool absorbed = false;
  for (std::size_t t = 0; t <= spec.horizon; ++t) {
    std::copy(s.begin(), s.end(), traj.state(t).begin());
    if (absorbed) {
      traj.actions[t] = kNullAction;
      traj.rewards[t] = 0.0;
      continue;
    }
    behavior.probabilities(HistoryWindow(traj, t, behavior.history_length()), probs);
    check_policy_output(probs, 2);
    const int a = sample_categorical(probs, rng);
    traj.actions[t] = a;
    traj.rewards[t] = cartpole_reward(spec, s);
    if (t < spec.horizon) {
      s = cartpole_step(spec, s, a);
      absorbed = cartpole_out_of_bounds(spec, s);
    }
  }
  return traj;
}

namespace {

template <typename Spec>
Dataset sample_many(const Spec& spec, const Policy& behavior, std::size_t n, std::uint64_t seed,
                    Dataset data) {
  if (n == 0) throw ValidationError("n must be >= 1");
  data.root_seed = seed;
  data.seeds.resize(n);
  data.trajectories.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    data.seeds[i] = substream_seed(seed, i);
    data.trajectories[i] = sample_trajectory(spec, behavior, data.seeds[i]);
  }
  return data;
}

MonteCarloEstimate summarize_returns(const std::vector<double>& returns) {
  MonteCarloEstimate est;
  est.episodes = returns.size();
  double mean = 0.0;
  for (double g : returns) mean += g;
  mean /= static_cast<double>(returns.size());
  double ss = 0.0;
  for (double g : returns) ss += (g - mean) * (g - mean);
  est.value = mean;
  if (returns.size() > 1) {
    const double var = ss / static_cast<double>(returns.size() - 1);
    est.standard_error = std::sqrt(var / static_cast<double>(returns.size()));
  }
  return est;
}

}  // namespace

Dataset sample_trajectories(const TabularMDPSpec& spec, const Policy& behavior, std::size_t n,
                            std::uint64_t seed) {
  spec.validate();
  if (behavior.num_actions() != spec.num_actions)
    throw ValidationError("behavior policy action count does not match the MDP");
  Dataset data;
  data.kind = EnvironmentKind::tabular;
  data.state_dim = 1;
  data.num_states = spec.num_states;
  data.num_actions = spec.num_actions;
  data.reward_bound = tabular_reward_bound(spec);
  return sample_many(spec, behavior, n, seed, std::move(data));
}

Dataset sample_trajectories(const CartPoleSpec& spec, const Policy& behavior, std::size_t n,
                            std::uint64_t seed) {
  spec.validate();
  if (behavior.num_actions() != 2) throw ValidationError("cartpole policies have two actions");
  Dataset data;
  data.kind = EnvironmentKind::cartpole;
  data.state_dim = 4;
  data.num_states = 0;
  data.num_actions = 2;
  data.reward_bound = spec.reward_bound();
  return sample_many(spec, behavior, n, seed, std::move(data));
}

MonteCarloEstimate monte_carlo_value(const BanditSpec& spec, std::size_t episodes, std::uint64_t seed) {
  if (episodes == 0) throw ValidationError("episodes must be >= 1");
  const Dataset data = sample_bandit_dataset_under(spec, spec.target_probs, episodes, seed);
  std::vector<double> returns(episodes);
  for (std::size_t i = 0; i < episodes; ++i) returns[i] = data[i].rewards[0];
  return summarize_returns(returns);
}

MonteCarloEstimate monte_carlo_value(const TabularMDPSpec& spec, const Policy& target,
                                     std::size_t episodes, double gamma, std::uint64_t seed) {
  spec.validate();
  if (episodes == 0) throw ValidationError("episodes must be >= 1");
  std::vector<double> returns(episodes);
  for (std::size_t i = 0; i < episodes; ++i)
    returns[i] = sample_trajectory(spec, target, substream_seed(seed, i)).discounted_return(gamma);
  return summarize_returns(returns);
}

MonteCarloEstimate monte_carlo_value(const CartPoleSpec& spec, const Policy& target,
                                     std::size_t episodes, double gamma, std::uint64_t seed) {
  spec.validate();
  if (episodes == 0) throw ValidationError("episodes must be >= 1");
  std::vector<double> returns(episodes);
  for (std::size_t i = 0; i < episodes; ++i)
    returns[i] = sample_trajectory(spec, target, substream_seed(seed, i)).discounted_return(gamma);
  return summarize_returns(returns);
}

double exact_value(const BanditSpec& spec) {
  spec.validate();
  return spec.context_probs.dot(spec.reward_mean * spec.target_probs);
}

std::vector<double> markov_probabilities(const Policy& policy, int state) {
  if (policy.history_length() != 0) throw ValidationError("expected a Markov policy");
  Trajectory probe(0, 1);
  probe.states[0] = state;
  std::vector<double> probs(policy.num_actions());
  policy.probabilities(HistoryWindow(probe, 0, 0), probs);
  return probs;
}

std::vector<Eigen::MatrixXd> state_action_marginals(const TabularMDPSpec& spec, const Policy& policy) {
  spec.validate();
  const auto S = static_cast<Eigen::Index>(spec.num_states);
  const auto A = static_cast<Eigen::Index>(spec.num_actions);
  Eigen::MatrixXd pi(S, A);
  for (Eigen::Index s = 0; s < S; ++s) {
    const auto p = markov_probabilities(policy, static_cast<int>(s));
    for (Eigen::Index a = 0; a < A; ++a) pi(s, a) = p[static_cast<std::size_t>(a)];
  }
  std::vector<Eigen::MatrixXd> marginals;
  marginals.reserve(spec.horizon + 1);
  Eigen::VectorXd d = spec.initial_dist;
  for (std::size_t t = 0; t <= spec.horizon; ++t) {
    Eigen::MatrixXd da = d.asDiagonal() * pi;
    marginals.push_back(da);
    Eigen::VectorXd next = Eigen::VectorXd::Zero(S);
    for (Eigen::Index a = 0; a < A; ++a)
      next += spec.transition[static_cast<std::size_t>(a)].transpose() * da.col(a);
    d = next;
  }
  return marginals;
}

double exact_value(const TabularMDPSpec& spec, const Policy& target, double gamma) {
  const auto marginals = state_action_marginals(spec, target);
  double value = 0.0, discount = 1.0;
  for (const auto& d : marginals) {
    value += discount * d.cwiseProduct(spec.reward_mean).sum();
    discount *= gamma;
  }
  return value;
}

}  // namespace ope
