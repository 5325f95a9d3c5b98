#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <memory>

#include "ope/environments.hpp"
#include "ope/estimators.hpp"
#include "ope/features.hpp"
#include "ope/policies.hpp"
#include "ope/random.hpp"
#include "ope/reference.hpp"

using namespace ope;

namespace {

TabularMDPSpec unit_chain(std::size_t horizon) {
  TabularMDPSpec s;
  s.num_states = 1;
  s.num_actions = 1;
  s.transition = {Eigen::MatrixXd::Ones(1, 1)};
  s.reward_mean = Eigen::MatrixXd::Ones(1, 1);
  s.initial_dist = Eigen::VectorXd::Ones(1);
  s.horizon = horizon;
  return s;
}

TabularMDPSpec small_mdp() {
  TabularMDPSpec s;
  s.num_states = 2;
  s.num_actions = 2;
  Eigen::MatrixXd p0(2, 2), p1(2, 2), r(2, 2);
  p0 << 0.8, 0.2, 0.4, 0.6;
  p1 << 0.3, 0.7, 0.5, 0.5;
  r << 1.0, 0.0, 0.5, 2.0;
  s.transition = {p0, p1};
  s.reward_mean = r;
  s.reward_noise_sd = 0.5;
  s.initial_dist = Eigen::Vector2d(0.6, 0.4);
  s.horizon = 3;
  return s;
}

TabularPolicy small_behavior() {
  Eigen::MatrixXd t(2, 2);
  t << 0.6, 0.4, 0.3, 0.7;
  return TabularPolicy(t);
}

TabularPolicy small_target() {
  Eigen::MatrixXd t(2, 2);
  t << 0.3, 0.7, 0.5, 0.5;
  return TabularPolicy(t);
}

Dataset bandit_records(const std::vector<std::array<double, 3>>& rows) {
  Dataset d;
  d.kind = EnvironmentKind::bandit;
  d.num_states = 2;
  d.num_actions = 2;
  for (const auto& [s, a, r] : rows) {
    Trajectory tr(0, 1);
    tr.states[0] = s;
    tr.actions[0] = static_cast<int>(a);
    tr.rewards[0] = r;
    d.trajectories.push_back(tr);
    d.seeds.push_back(d.seeds.size());
  }
  return d;
}

double mean(const Eigen::VectorXd& v) { return v.mean(); }
double standard_error(const Eigen::VectorXd& v) {
  return std::sqrt((v.array() - v.mean()).square().sum() / (v.size() - 1) / v.size());
}

}  // namespace

TEST(Weights, IdenticalPoliciesGiveUnitWeights) {
  const Dataset d = sample_trajectories(reference_mdp_spec(), reference_behavior_policy(), 50, 1);
  const ISWeights w = compute_weights(d, reference_behavior_policy(), reference_behavior_policy());
  EXPECT_EQ(w.lambda, Eigen::MatrixXd::Ones(50, 11));
  EXPECT_EQ(w.coverage, 1.0);
}

TEST(Weights, CumulativeProductOfStepRatios) {
  const Dataset d = sample_trajectories(small_mdp(), small_behavior(), 40, 2);
  const TabularPolicy b = small_behavior(), e = small_target();
  const ISWeights w = compute_weights(d, e, b);
  double cmax = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    double prod = 1.0;
    for (std::size_t t = 0; t <= 3; ++t) {
      const int s = d[i].discrete_state(t), a = d[i].actions[t];
      prod *= e(s, a) / b(s, a);
      cmax = std::max(cmax, e(s, a) / b(s, a));
      EXPECT_NEAR(w.lambda(i, t), prod, 1e-14 * prod);
    }
  }
  EXPECT_DOUBLE_EQ(w.coverage, cmax);
  EXPECT_DOUBLE_EQ(w.min_behavior_probability, 0.3);
}

TEST(Weights, OracleWeightsHaveUnitMean) {
  const Dataset d = sample_trajectories(small_mdp(), small_behavior(), 100000, 3);
  const ISWeights w = compute_weights(d, small_target(), small_behavior());
  for (Eigen::Index t = 0; t < w.lambda.cols(); ++t) {
    const Eigen::VectorXd col = w.lambda.col(t);
    EXPECT_NEAR(mean(col), 1.0, 4.0 * standard_error(col)) << t;
  }
}

TEST(Weights, ZeroBehaviorProbabilityIsAnError) {
  const Dataset d = sample_trajectories(small_mdp(), small_behavior(), 20, 4);
  Eigen::MatrixXd t(2, 2);
  t << 1.0, 0.0, 1.0, 0.0;
  EXPECT_THROW(compute_weights(d, small_target(), TabularPolicy(t)), EstimationError);
}

TEST(BanditIS, HandComputedThreeModes) {
  const BanditSpec spec = toy_bandit_spec();
  // (context, action, reward): one record with a = 1 in context 0 and one with a = 0 in context 1.
  const Dataset d = bandit_records({{0, 1, 10.1}, {1, 0, 0.3}});
  EXPECT_NEAR(bandit_is(d, BanditMode::oracle, spec), ((0.4 / 0.3) * 10.1 + (0.6 / 0.7) * 0.3) / 2, 1e-12);
  EXPECT_NEAR(bandit_is(d, BanditMode::context_agnostic, spec), ((0.4 / 0.5) * 10.1 + (0.6 / 0.5) * 0.3) / 2,
              1e-12);
  EXPECT_NEAR(bandit_is(d, BanditMode::context_dependent, spec), (0.4 * 10.1 + 0.6 * 0.3) / 2, 1e-12);
}

TEST(BanditIS, ContextDependentOnlyUsesObservedCells) {
  // Context 1 is never seen; the estimator only evaluates visited cells.
  const Dataset d = bandit_records({{0, 1, 10.1}, {0, 0, 0.1}});
  EXPECT_NEAR(bandit_is(d, BanditMode::context_dependent, toy_bandit_spec()),
              (0.4 / 0.5 * 10.1 + 0.6 / 0.5 * 0.1) / 2, 1e-12);
}

TEST(BanditIS, ModeNamesRoundTrip) {
  for (BanditMode m : {BanditMode::oracle, BanditMode::context_agnostic, BanditMode::context_dependent})
    EXPECT_EQ(parse_bandit_mode(to_string(m)), m);
  EXPECT_EQ(parse_bandit_mode("cd"), BanditMode::context_dependent);
  EXPECT_THROW(parse_bandit_mode("nope"), ValidationError);
}

TEST(Sequential, DegenerateChainGivesHorizonPlusOne) {
  const TabularMDPSpec s = unit_chain(4);
  const TabularPolicy p(Eigen::MatrixXd::Ones(1, 1));
  const Dataset d = sample_trajectories(s, p, 10, 5);
  const ISWeights w = compute_weights(d, p, p);
  const QFunction q = exact_q_function(s, p, 1.0);
  EXPECT_EQ(ois(d, w, 1.0), 5.0);
  EXPECT_EQ(sis(d, w, 1.0), 5.0);
  EXPECT_EQ(dr(d, w, q, p, 1.0), 5.0);
  EXPECT_EQ(dr(d, w, QFunction::zero().with_offset(7.0), p, 1.0), 5.0);
  EXPECT_EQ(mis(d, fit_mis_ratios(d, p, std::make_shared<ConstantFeatures>(), 0.0), 1.0), 5.0);
  EXPECT_NEAR(drl_linear(d, p, std::make_shared<ConstantFeatures>(), 0.0, 1.0), 5.0, 1e-12);
}

TEST(Sequential, DrWithZeroQIsSis) {
  const Dataset d = sample_trajectories(small_mdp(), small_behavior(), 300, 6);
  const ISWeights w = compute_weights(d, small_target(), small_behavior());
  EXPECT_NEAR(dr(d, w, QFunction::zero(), small_target(), 0.9), sis(d, w, 0.9), 1e-12);
}

TEST(Sequential, ExactQFunctionReproducesValue) {
  const TabularMDPSpec s = reference_mdp_spec();
  const TabularPolicy e = reference_target_policy();
  const QFunction q = exact_q_function(s, e, 1.0);
  double v = 0.0;
  for (int st = 0; st < 4; ++st)
    for (int a = 0; a < 2; ++a) v += s.initial_dist[st] * e(st, a) * q.tables()[0](st, a);
  EXPECT_NEAR(v, exact_value(s, e, 1.0), 1e-10);
  EXPECT_NEAR(exact_value(s, e, 1.0), 25.205332, 1e-6);
}

TEST(Sequential, OracleEstimatorsAreUnbiased) {
  const TabularMDPSpec s = reference_mdp_spec();
  const TabularPolicy b = reference_behavior_policy(), e = reference_target_policy();
  const double truth = exact_value(s, e, 1.0);
  const QFunction q = exact_q_function(s, e, 1.0).with_offset(3.0);
  const int reps = 10000;
  Eigen::VectorXd vo(reps), vs(reps), vd(reps);
  for (int r = 0; r < reps; ++r) {
    const Dataset d = sample_trajectories(s, b, 200, substream_seed(31, r));
    const ISWeights w = compute_weights(d, e, b);
    vo[r] = ois(d, w, 1.0);
    vs[r] = sis(d, w, 1.0);
    vd[r] = dr(d, w, q, e, 1.0);
  }
  EXPECT_NEAR(mean(vo), truth, 4.0 * standard_error(vo));
  EXPECT_NEAR(mean(vs), truth, 4.0 * standard_error(vs));
  EXPECT_NEAR(mean(vd), truth, 4.0 * standard_error(vd));
}

TEST(MIS, ConstantFeaturesGiveUnitRatios) {
  const Dataset d = sample_trajectories(small_mdp(), small_behavior(), 500, 7);
  const MISRatioModel m = fit_mis_ratios(d, small_target(), std::make_shared<ConstantFeatures>(), 0.0);
  EXPECT_NEAR((m.weights.array() - 1.0).abs().maxCoeff(), 0.0, 1e-12);
  EXPECT_NEAR(m.max_mean_deviation, 0.0, 1e-12);
}

TEST(MIS, TabularRatiosConvergeToMarginalRatios) {
  const TabularMDPSpec s = small_mdp();
  const Dataset d = sample_trajectories(s, small_behavior(), 100000, 8);
  const auto features = std::make_shared<TabularStateActionFeatures>(2, 2);
  const MISRatioModel m = fit_mis_ratios(d, small_target(), features, 0.0);
  const auto exact = exact_marginal_ratios(s, small_target(), small_behavior());
  for (std::size_t t = 0; t <= s.horizon; ++t)
    for (int st = 0; st < 2; ++st)
      for (int a = 0; a < 2; ++a) {
        const double w = m.alphas[t][st * 2 + a];
        EXPECT_NEAR(w, exact[t](st, a), 0.02 * exact[t](st, a)) << t << ' ' << st << ' ' << a;
      }
}

TEST(MIS, SaturatedHistoryRatiosAreEmpiricalImportanceWeights) {
  const TabularMDPSpec s = small_mdp();
  const TabularPolicy e = small_target();
  const Dataset d = sample_trajectories(s, small_behavior(), 3000, 9);
  const MISRatioModel m = fit_mis_ratios(d, e, HistoryOneHotFeatures::fit(d, s.horizon), 0.0);
  // Independent oracle: lambda_t = prod_u pi_e(a_u | s_u) n(h_u) / n(h_u, a_u) with
  // counts over full observed prefixes.
  std::map<std::vector<int>, double> counts;
  for (const Trajectory& tr : d.trajectories) {
    std::vector<int> key;
    for (std::size_t t = 0; t <= s.horizon; ++t) {
      key.push_back(tr.discrete_state(t));
      counts[key] += 1;
      key.push_back(tr.actions[t]);
      counts[key] += 1;
    }
  }
  for (std::size_t i = 0; i < d.size(); ++i) {
    std::vector<int> key;
    double lambda = 1.0;
    for (std::size_t t = 0; t <= s.horizon; ++t) {
      key.push_back(d[i].discrete_state(t));
      const double nh = counts[key];
      key.push_back(d[i].actions[t]);
      lambda *= e(d[i].discrete_state(t), d[i].actions[t]) * nh / counts[key];
      EXPECT_NEAR(m.weights(i, t), lambda, 1e-6) << i << ' ' << t;
    }
  }
}

TEST(MIS, SingularGramWithoutRidgeIsAnError) {
  const TabularMDPSpec s = small_mdp();
  Eigen::MatrixXd t(2, 2);
  t << 1.0, 0.0, 1.0, 0.0;  // action 1 never observed
  const TabularPolicy b(t);
  Eigen::MatrixXd et(2, 2);
  et << 0.5, 0.5, 0.5, 0.5;
  const Dataset d = sample_trajectories(s, b, 100, 10);
  const auto features = std::make_shared<TabularStateActionFeatures>(2, 2);
  EXPECT_THROW(fit_mis_ratios(d, TabularPolicy(et), features, 0.0), EstimationError);
  EXPECT_NO_THROW(fit_mis_ratios(d, TabularPolicy(et), features, 1e-8));
}

TEST(DRL, MatchesMisWithoutRidge) {
  const TabularMDPSpec s = reference_mdp_spec();
  const Dataset d = sample_trajectories(s, reference_behavior_policy(), 2000, 11);
  const TabularPolicy e = reference_target_policy();
  for (std::size_t k : {0u, 1u}) {
    std::shared_ptr<const StateActionFeatures> f;
    if (k == 0)
      f = std::make_shared<TabularStateActionFeatures>(4, 2);
    else
      f = HistoryOneHotFeatures::fit(d, k);
    const DRLResult r = fit_drl_linear(d, e, f, 0.0, 1.0);
    EXPECT_NEAR(r.estimate, mis(d, r.ratios, 1.0), 1e-8) << k;
  }
}

TEST(DRL, LinearQIsExactOnTabularModelInTheLimit) {
  const TabularMDPSpec s = small_mdp();
  const Dataset d = sample_trajectories(s, small_behavior(), 50000, 12);
  const DRLResult r = fit_drl_linear(d, small_target(), std::make_shared<TabularStateActionFeatures>(2, 2),
                                     0.0, 1.0);
  const QFunction exact = exact_q_function(s, small_target(), 1.0);
  for (std::size_t t = 0; t <= s.horizon; ++t)
    for (int a = 0; a < 2; ++a)
      EXPECT_NEAR(r.q(d[0], t, a), exact(d[0], t, a), 0.05) << t << ' ' << a;
}

TEST(Diagnostics, UnitWeightsHaveFullEffectiveSampleSize) {
  const Dataset d = sample_trajectories(small_mdp(), small_behavior(), 64, 13);
  const ISWeights w = compute_weights(d, small_behavior(), small_behavior());
  const EstimateDiagnostics g = diagnose("sis", "oracle", w);
  EXPECT_DOUBLE_EQ(g.weight_concentration, 1.0 / 64);
  EXPECT_DOUBLE_EQ(g.effective_sample_size, 64.0);
  EXPECT_EQ(g.n, 64u);
}

TEST(Sequential, HorizonZeroReducesToBanditIS) {
  const BanditSpec spec = toy_bandit_spec();
  const Dataset d = sample_bandit_dataset(spec, 777, 14);
  const ISWeights w = compute_weights(d, TabularPolicy::context_agnostic(spec.target_probs),
                                      TabularPolicy::context_agnostic(spec.behavior_probs));
  const double b = bandit_is(d, BanditMode::oracle, spec);
  EXPECT_EQ(ois(d, w, 1.0), b);
  EXPECT_EQ(sis(d, w, 1.0), b);
}
