#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <memory>

#include "ope/analysis.hpp"
#include "ope/environments.hpp"
#include "ope/random.hpp"
#include "ope/reference.hpp"

using namespace ope;

namespace {

Eigen::VectorXd normal_draws(std::size_t n, double mu, double sd, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  std::normal_distribution<double> z(mu, sd);
  Eigen::VectorXd v(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = z(rng);
  return v;
}

SequentialSweepConfig reference_sweep_config() {
  SequentialSweepConfig c;
  c.estimators = {"sis", "dr", "mis"};
  c.ks = {"oracle", "0", "1"};
  c.target = std::make_shared<TabularPolicy>(reference_target_policy());
  c.behavior = std::make_shared<TabularPolicy>(reference_behavior_policy());
  c.policy_class = std::make_shared<ParametricHistoryPolicy>(tabular_policy_class(4, 2));
  c.q = exact_q_function(reference_mdp_spec(), reference_target_policy(), 1.0);
  c.q_offset = 3.0;
  return c;
}

}  // namespace

TEST(SelectHistory, WorkedExampleChoosesTwo) {
  const std::size_t n = 100;
  const std::vector<double> v = {1.0, 0.9, 0.89};
  const HistorySelection s = select_history({0, 1, 2}, v, n);
  for (std::size_t h = 0; h < 3; ++h)
    EXPECT_DOUBLE_EQ(s.objectives[h], 2.0 * n * v[h] - static_cast<double>(h) * std::log(100.0));
  EXPECT_NEAR(s.objectives[0], 200.0, 1e-12);
  EXPECT_NEAR(s.objectives[1], 175.39, 5e-3);
  EXPECT_NEAR(s.objectives[2], 168.79, 5e-3);
  EXPECT_EQ(s.h_star, 2u);
}

TEST(SelectHistory, ConstantVarianceRewardsLongerHistory) {
  // The -h log n term decreases in h, so with flat variances the largest h wins.
  const HistorySelection s = select_history({0, 1, 2, 3}, {0.5, 0.5, 0.5, 0.5}, 1000);
  EXPECT_EQ(s.h_star, 3u);
  for (std::size_t h = 1; h < 4; ++h) EXPECT_LT(s.objectives[h], s.objectives[h - 1]);
}

TEST(SelectHistory, SingleCandidateAndTies) {
  EXPECT_EQ(select_history({3}, {9.0}, 50).h_star, 3u);
  // log 1 = 0, so equal variances tie and the smaller h wins.
  EXPECT_EQ(select_history({2, 1, 3}, {0.4, 0.4, 0.4}, 1).h_star, 1u);
}

TEST(SelectHistory, RejectsMalformedInput) {
  EXPECT_THROW(select_history({}, {}, 10), ValidationError);
  EXPECT_THROW(select_history({0, 1}, {1.0}, 10), ValidationError);
}

TEST(SelectHistory, BootstrapNeedsTenTrajectories) {
  const Dataset d = sample_trajectories(reference_mdp_spec(), reference_behavior_policy(), 9, 1);
  const TabularPolicy e = reference_target_policy();
  EXPECT_THROW(select_history(d, e, tabular_policy_class(4, 2), nullptr, {0, 1}, {}), ValidationError);
}

TEST(SelectHistory, DataDrivenSelectionIsReproducible) {
  const Dataset d = sample_trajectories(reference_mdp_spec(), reference_behavior_policy(), 400, 2);
  const TabularPolicy e = reference_target_policy();
  SelectHistoryOptions o;
  o.bootstrap_resamples = 20;
  o.seed = 5;
  o.workers = 1;
  const HistorySelection a = select_history(d, e, tabular_policy_class(4, 2), nullptr, {0, 1}, o);
  o.workers = 3;
  const HistorySelection b = select_history(d, e, tabular_policy_class(4, 2), nullptr, {0, 1}, o);
  EXPECT_EQ(a.variances, b.variances);
  EXPECT_EQ(a.h_star, b.h_star);
  for (double v : a.variances) EXPECT_GT(v, 0.0);

  o.method = VarianceMethod::sampling_formula;
  const HistorySelection f = select_history(d, e, tabular_policy_class(4, 2), nullptr, {0, 1}, o);
  // Both estimate the variance of the same estimator; they agree to within a small factor.
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_GT(f.variances[i], 0.0);
    EXPECT_LT(std::abs(std::log(f.variances[i] / a.variances[i])), std::log(3.0));
  }
}

TEST(Projection, UncorrelatedScoresLeaveVarianceUnchanged) {
  const Eigen::VectorXd x = normal_draws(500, 1.0, 2.0, 3);
  const ProjectionReport r = project_terms(x, Eigen::MatrixXd::Zero(500, 0));
  const double plug_in = (x.array() - x.mean()).square().mean();
  EXPECT_NEAR(r.var_raw, plug_in, 1e-12);
  EXPECT_NEAR(r.var_projected, plug_in, 1e-12);
}

TEST(Projection, TermsInScoreSpanProjectToZero) {
  Eigen::MatrixXd s(1000, 2);
  s.col(0) = normal_draws(1000, 0.0, 1.0, 4);
  s.col(1) = normal_draws(1000, 0.0, 1.0, 5);
  s.rowwise() -= s.colwise().mean();
  const Eigen::VectorXd x = (5.0 + (s * Eigen::Vector2d(2.0, -1.0)).array()).matrix();
  const ProjectionReport r = project_terms(x, s);
  EXPECT_GT(r.var_raw, 1.0);
  EXPECT_NEAR(r.var_projected, 0.0, 1e-10);
}

TEST(Projection, NeverExceedsRawVarianceAndIsNonNegative) {
  const Dataset d = sample_trajectories(reference_mdp_spec(), reference_behavior_policy(), 1000, 6);
  const TabularPolicy e = reference_target_policy(), b = reference_behavior_policy();
  const QFunction q = exact_q_function(reference_mdp_spec(), e, 1.0);
  for (CoreKind core : {CoreKind::ois, CoreKind::sis, CoreKind::dr})
    for (std::size_t k : {0u, 1u}) {
      const ParametricHistoryPolicy cls = tabular_softmax_policy(b).embedded(k);
      const ProjectionReport r = projection_variance(d, e, b, cls, core, &q, 1.0);
      EXPECT_GE(r.var_projected, 0.0);
      EXPECT_LE(r.var_projected, r.var_raw + 1e-12);
      EXPECT_EQ(r.k, k);
    }
}

TEST(Summary, MseIsBiasSquaredPlusVariance) {
  const Eigen::VectorXd v = normal_draws(300, 2.0, 1.5, 7);
  const SweepRow r = summarize_estimates(v, 1.7, 0.0);
  EXPECT_NEAR(r.mse, r.bias * r.bias + r.variance, 1e-12);
  EXPECT_NEAR(r.mse, (v.array() - 1.7).square().mean(), 1e-12);
  EXPECT_NEAR(r.bias, v.mean() - 1.7, 1e-12);
}

TEST(Summary, BiasStandardErrorIsSampleStandardError) {
  const Eigen::VectorXd v = normal_draws(400, 0.0, 3.0, 8);
  const double s2 = (v.array() - v.mean()).square().sum() / 399.0;
  EXPECT_NEAR(summarize_estimates(v, 0.0, 0.0).bias_se, std::sqrt(s2 / 400), 1e-12);
  EXPECT_NEAR(summarize_estimates(v, 0.0, 0.2).bias_se, std::sqrt(s2 / 400 + 0.04), 1e-12);
}

TEST(Summary, VarianceStandardErrorScalesAsNormalTheory) {
  const double sd = 2.0;
  const std::size_t R = 4000;
  const SweepRow r = summarize_estimates(normal_draws(R, 0.0, sd, 9), 0.0, 0.0);
  const double expected = sd * sd * std::sqrt(2.0 / R);
  EXPECT_NEAR(r.variance_se, expected, 0.1 * expected);
}

TEST(Summary, FailureBudgetMarksRowsInvalid) {
  Eigen::VectorXd v = normal_draws(200, 0.0, 1.0, 10);
  v[3] = std::numeric_limits<double>::quiet_NaN();
  v[4] = std::numeric_limits<double>::quiet_NaN();
  SweepRow r = summarize_estimates(v, 0.0, 0.0);
  EXPECT_TRUE(r.valid);
  EXPECT_EQ(r.failures, 2u);
  EXPECT_EQ(r.replications, 198u);
  v[5] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_FALSE(summarize_estimates(v, 0.0, 0.0).valid);
}

TEST(Sweep, WorkerCountDoesNotChangeResults) {
  const BanditSweepProblem p(toy_bandit_spec());
  SweepOptions o;
  o.ns = {50, 200};
  o.replications = 60;
  o.seed = 11;
  o.workers = 1;
  const SweepReport a = run_sweep(p, o);
  o.workers = 4;
  const SweepReport b = run_sweep(p, o);
  ASSERT_EQ(a.estimates.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) EXPECT_EQ(a.estimates[i], b.estimates[i]);
  EXPECT_EQ(a.rows.size(), 6u);
}

TEST(Sweep, PairedDifferences) {
  const BanditSweepProblem p(toy_bandit_spec());
  SweepOptions o;
  o.ns = {100};
  o.replications = 500;
  o.seed = 12;
  const SweepReport r = run_sweep(p, o);
  const SweepColumn oracle{"oracle", "oracle"}, ca{"context_agnostic", "0"};
  const PairedDifference self = r.variance_difference(oracle, oracle, 100);
  EXPECT_EQ(self.difference, 0.0);
  const PairedDifference d = r.variance_difference(ca, oracle, 100);
  EXPECT_NEAR(d.difference, r.row("context_agnostic", "0", 100).variance - r.row("oracle", "oracle", 100).variance,
              1e-12);
  EXPECT_GT(d.se, 0.0);
  const PairedDifference m = r.mse_difference(ca, oracle, 100);
  EXPECT_NEAR(m.difference, r.row("context_agnostic", "0", 100).mse - r.row("oracle", "oracle", 100).mse, 1e-12);
}

TEST(Sweep, RejectsDegenerateOptions) {
  const BanditSweepProblem p(toy_bandit_spec());
  SweepOptions o;
  o.ns = {10};
  o.replications = 1;
  EXPECT_THROW(run_sweep(p, o), ValidationError);
  o.replications = 5;
  o.ns = {};
  EXPECT_THROW(run_sweep(p, o), ValidationError);
}

TEST(SequentialSweep, ColumnsAndFiniteEstimates) {
  const SequentialSweepProblem p(reference_mdp_spec(), reference_sweep_config());
  const auto cols = p.columns();
  ASSERT_EQ(cols.size(), 9u);
  EXPECT_EQ(cols[0], (SweepColumn{"sis", "oracle"}));
  EXPECT_EQ(cols[8], (SweepColumn{"mis", "1"}));
  EXPECT_NEAR(p.truth(), 25.205332, 1e-6);
  const std::vector<double> v = p.evaluate(300, 13);
  for (double x : v) EXPECT_TRUE(std::isfinite(x));
  EXPECT_EQ(v, p.evaluate(300, 13));
}

TEST(SequentialSweep, RejectsBadConfigs) {
  SequentialSweepConfig c = reference_sweep_config();
  c.estimators = {};
  EXPECT_THROW(SequentialSweepProblem(reference_mdp_spec(), c), ValidationError);
  c = reference_sweep_config();
  c.estimators = {"bogus"};
  EXPECT_THROW(SequentialSweepProblem(reference_mdp_spec(), c), ValidationError);
  c = reference_sweep_config();
  c.ks = {"-1"};
  EXPECT_THROW(SequentialSweepProblem(reference_mdp_spec(), c), ValidationError);
  c = reference_sweep_config();
  c.estimators = {"mis"};
  EXPECT_THROW(SequentialSweepProblem(CartPoleSpec{}, c, 0.0, 0.0), ValidationError);
}

TEST(Coverage, ToyBanditRatio) {
  const BanditSpec spec = toy_bandit_spec();
  const Dataset d = sample_bandit_dataset(spec, 500, 14);
  const TabularPolicy b = TabularPolicy::context_agnostic(spec.behavior_probs);
  const TabularPolicy e = TabularPolicy::context_agnostic(spec.target_probs);
  const CoverageReport c = coverage_diagnostics(d, e, b);
  EXPECT_DOUBLE_EQ(c.c_hat, 4.0 / 3.0);
  EXPECT_DOUBLE_EQ(c.eps_hat, 0.3);
  double rmax = 0.0;
  for (const Trajectory& tr : d.trajectories) rmax = std::max(rmax, std::abs(tr.rewards[0]));
  EXPECT_EQ(c.r_max, rmax);
  EXPECT_FALSE(c.u_max.has_value());
}

TEST(Coverage, ExactQGivesBoundedResiduals) {
  const TabularMDPSpec s = reference_mdp_spec();
  TabularMDPSpec quiet = s;
  quiet.reward_noise_sd = 0.0;
  const Dataset d = sample_trajectories(quiet, reference_behavior_policy(), 200, 15);
  const QFunction q = exact_q_function(quiet, reference_target_policy(), 1.0);
  const CoverageReport c = coverage_diagnostics(d, reference_target_policy(), reference_behavior_policy(), &q);
  ASSERT_TRUE(c.u_max.has_value());
  EXPECT_GE(*c.u_max, 0.0);
  EXPECT_LT(*c.u_max, 2.0 * s.num_states * 10.0);
}
