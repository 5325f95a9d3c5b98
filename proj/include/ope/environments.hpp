#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "ope/policy.hpp"
#include "ope/trajectory.hpp"

namespace ope {

/// Contextual bandit with context-independent behavior and target policies.
struct BanditSpec {
  Eigen::VectorXd context_probs;
  Eigen::MatrixXd reward_mean;  // contexts x actions
  double reward_noise_sd = 1.0;
  Eigen::VectorXd behavior_probs;
  Eigen::VectorXd target_probs;

  std::size_t num_contexts() const { return static_cast<std::size_t>(context_probs.size()); }
  std::size_t num_actions() const { return static_cast<std::size_t>(behavior_probs.size()); }
  void validate() const;
};

/// Finite-horizon tabular MDP. transition[a](s, s') = P(s' | s, a).
struct TabularMDPSpec {
  std::size_t num_states = 0;
  std::size_t num_actions = 0;
  std::vector<Eigen::MatrixXd> transition;
  Eigen::MatrixXd reward_mean;  // states x actions
  double reward_noise_sd = 0.0;
  Eigen::VectorXd initial_dist;
  std::size_t horizon = 1;  // T; trajectories have T + 1 steps
  double discount = 1.0;

  void validate() const;
};

/// Cart-pole balancing with Euler-integrated inverted-pendulum dynamics and
/// reward (2 - x / x_max)(2 - theta / theta_max) - 1 on the pre-action state.
struct CartPoleSpec {
  double gravity = 9.8;
  double cart_mass = 1.0;
  double pole_mass = 0.1;
  double pole_half_length = 0.5;
  double force_magnitude = 10.0;
  double dt = 0.02;
  double x_max = 2.4;
  double theta_max = 12.0 * 2.0 * 3.14159265358979323846 / 360.0;
  std::size_t horizon = 200;
  double init_range = 0.05;
  double behavior_logit_scale = 10.0;
  double target_logit_scale = 20.0;

  void validate() const;
  /// Largest |reward| attainable from an in-bounds state.
  double reward_bound() const;
};

using CartPoleState = std::array<double, 4>;  // (x, x_dot, theta, theta_dot)

double cartpole_reward(const CartPoleSpec& spec, std::span<const double> state);
/// One integration step; action 1 pushes with +force, action 0 with -force.
CartPoleState cartpole_step(const CartPoleSpec& spec, std::span<const double> state, int action);
bool cartpole_out_of_bounds(const CartPoleSpec& spec, std::span<const double> state);
/// Step driven by an explicit force (used for the zero-force sanity check).
CartPoleState cartpole_step_with_force(const CartPoleSpec& spec, std::span<const double> state,
                                       double force);

/// n context-action-reward triplets stored as horizon-0 trajectories.
Dataset sample_bandit_dataset(const BanditSpec& spec, std::size_t n, std::uint64_t seed);

/// Bandit data collected under an arbitrary action distribution (used by the
/// Monte Carlo ground truth, which runs the target).
Dataset sample_bandit_dataset_under(const BanditSpec& spec, const Eigen::VectorXd& action_probs,
                                    std::size_t n, std::uint64_t seed);

Dataset sample_trajectories(const TabularMDPSpec& spec, const Policy& behavior, std::size_t n,
                            std::uint64_t seed);

/// Episodes that leave the bounds before the horizon are padded with an
/// absorbing copy of the terminal state, reward 0 and kNullAction.
Dataset sample_trajectories(const CartPoleSpec& spec, const Policy& behavior, std::size_t n,
                            std::uint64_t seed);

/// Generates one trajectory from an explicit substream seed.
Trajectory sample_trajectory(const TabularMDPSpec& spec, const Policy& behavior, std::uint64_t seed);
Trajectory sample_trajectory(const CartPoleSpec& spec, const Policy& behavior, std::uint64_t seed);

struct MonteCarloEstimate {
  double value = 0.0;
  double standard_error = 0.0;
  std::size_t episodes = 0;
};

MonteCarloEstimate monte_carlo_value(const BanditSpec& spec, std::size_t episodes, std::uint64_t seed);
MonteCarloEstimate monte_carlo_value(const TabularMDPSpec& spec, const Policy& target,
                                     std::size_t episodes, double gamma, std::uint64_t seed);
MonteCarloEstimate monte_carlo_value(const CartPoleSpec& spec, const Policy& target,
                                     std::size_t episodes, double gamma, std::uint64_t seed);

/// Closed-form target value sum_s P(s) sum_a pi_e(a) r(s, a).
double exact_value(const BanditSpec& spec);

/// Target value by forward propagation of the state distribution; `target`
/// must be Markov.
double exact_value(const TabularMDPSpec& spec, const Policy& target, double gamma);

/// Marginal state-action distributions d_t(s, a) for t = 0..T under a Markov
/// policy, computed by exact forward recursion.
std::vector<Eigen::MatrixXd> state_action_marginals(const TabularMDPSpec& spec, const Policy& policy);

/// Evaluates a Markov policy at a discrete state.
std::vector<double> markov_probabilities(const Policy& policy, int state);

}  // namespace ope
