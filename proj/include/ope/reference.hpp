#pragma once

#include <memory>

#include "ope/environments.hpp"
#include "ope/policies.hpp"

namespace ope {

/// Two contexts, two actions: P(S = s) = 1/2, r(s, a) = 10a + 0.1(1 + 2s),
/// pi_b(1) = 0.3, pi_e(1) = 0.4. The target value is 4.2.
BanditSpec toy_bandit_spec(double reward_noise_sd = 1.0);

/// Small four-state MDP with horizon 10 used by the variance experiments.
TabularMDPSpec reference_mdp_spec();
TabularPolicy reference_behavior_policy();
TabularPolicy reference_target_policy();

/// Markov tabular policy written as a member of the k = 0 softmax class over
/// one-hot state features, with uniform mixing `mixing`. Requires every
/// probability to be at least mixing / |A|.
ParametricHistoryPolicy tabular_softmax_policy(const TabularPolicy& policy, double mixing = kDefaultMixing);

/// The k-lag softmax class over one-hot features of a finite MDP.
ParametricHistoryPolicy tabular_policy_class(std::size_t num_states, std::size_t num_actions,
                                             std::size_t k = 0, double mixing = kDefaultMixing);

/// Logistic CartPole policy P(A = 1 | s) = 1 / (1 + exp(scale * theta)).
ParametricHistoryPolicy cartpole_policy(double scale);

/// The k-lag logistic class over linear CartPole state features.
ParametricHistoryPolicy cartpole_policy_class(std::size_t k = 0, double mixing = kDefaultMixing);

}  // namespace ope
