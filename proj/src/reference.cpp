#include "ope/reference.hpp"

#include <cmath>

#include "ope/common.hpp"
#include "ope/features.hpp"

namespace ope {

BanditSpec toy_bandit_spec(double reward_noise_sd) {
  BanditSpec spec;
  spec.context_probs = Eigen::Vector2d(0.5, 0.5);
  spec.reward_mean.resize(2, 2);
  for (int s = 0; s < 2; ++s)
    for (int a = 0; a < 2; ++a) spec.reward_mean(s, a) = 10.0 * a + 0.1 * (1.0 + 2.0 * s);
  spec.reward_noise_sd = reward_noise_sd;
  spec.behavior_probs = Eigen::Vector2d(0.7, 0.3);
  spec.target_probs = Eigen::Vector2d(0.6, 0.4);
  spec.validate();
  return spec;
}

TabularMDPSpec reference_mdp_spec() {
  // Two closed two-state components; the second pays 3 more per step. Which
  // component the episode starts in fixes most of the return.
  TabularMDPSpec spec;
  spec.num_states = 4;
  spec.num_actions = 2;
  spec.horizon = 10;
  spec.discount = 1.0;
  spec.reward_noise_sd = 0.5;
  spec.initial_dist = Eigen::Vector4d(0.3, 0.2, 0.3, 0.2);
  // Action 0 mostly stays, action 1 mostly switches within the component.
  Eigen::MatrixXd stay = Eigen::MatrixXd::Zero(4, 4), flip = Eigen::MatrixXd::Zero(4, 4);
  for (int c = 0; c < 4; c += 2) {
    stay.block(c, c, 2, 2) << 0.8, 0.2,
                              0.3, 0.7;
    flip.block(c, c, 2, 2) << 0.2, 0.8,
                              0.9, 0.1;
  }
  spec.transition = {stay, flip};
  spec.reward_mean.resize(4, 2);
  spec.reward_mean << 0.0, 1.0,
                      1.5, 0.5,
                      3.0, 4.0,
                      4.5, 3.5;
  spec.validate();
  return spec;
}

TabularPolicy reference_behavior_policy() {
  Eigen::MatrixXd table(4, 2);
  table << 0.5, 0.5,
           0.6, 0.4,
           0.4, 0.6,
           0.5, 0.5;
  return TabularPolicy(table);
}

TabularPolicy reference_target_policy() {
  Eigen::MatrixXd table(4, 2);
  table << 0.35, 0.65,
           0.7, 0.3,
           0.55, 0.45,
           0.4, 0.6;
  return TabularPolicy(table);
}

ParametricHistoryPolicy tabular_policy_class(std::size_t num_states, std::size_t num_actions, std::size_t k,
                                             double mixing) {
  return ParametricHistoryPolicy(std::make_shared<TabularBasis>(num_states, num_actions), k, num_actions,
                                 ActionEncoding::reference, mixing);
}

ParametricHistoryPolicy tabular_softmax_policy(const TabularPolicy& policy, double mixing) {
  if (!policy.context_dependent()) throw ValidationError("expected a state-dependent policy table");
  const Eigen::MatrixXd& table = policy.table();
  const auto S = table.rows();
  const auto A = table.cols();
  ParametricHistoryPolicy out = tabular_policy_class(static_cast<std::size_t>(S), static_cast<std::size_t>(A), 0,
                                                     mixing);
  // Parameter layout for lag 0: copy e = a - 1 of the S one-hot weights.
  Eigen::VectorXd theta(out.dimension());
  const double floor = mixing / static_cast<double>(A);
  for (Eigen::Index s = 0; s < S; ++s) {
    auto raw = [&](Eigen::Index a) {
      const double p = (table(s, a) - floor) / (1.0 - mixing);
      if (!(p > 0.0)) throw ValidationError("policy probability below the mixing floor");
      return p;
    };
    for (Eigen::Index a = 1; a < A; ++a) theta[(a - 1) * S + s] = std::log(raw(a) / raw(0));
  }
  out.set_theta(theta);
  return out;
}

ParametricHistoryPolicy cartpole_policy(double scale) {
  ParametricHistoryPolicy p = cartpole_policy_class(0, 0.0);
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p.dimension()));
  theta[3] = -scale;  // lag-0 features are (1, x, x_dot, theta, theta_dot)
  p.set_theta(theta);
  return p;
}

ParametricHistoryPolicy cartpole_policy_class(std::size_t k, double mixing) {
  return ParametricHistoryPolicy(std::make_shared<LinearBasis>(4, 2), k, 2, ActionEncoding::reference, mixing);
}

}  // namespace ope
