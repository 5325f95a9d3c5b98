// Acceptance checks: prints one PASS/FAIL line per criterion and exits
// nonzero when any criterion fails.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "ope/analysis.hpp"
#include "ope/environments.hpp"
#include "ope/estimators.hpp"
#include "ope/features.hpp"
#include "ope/random.hpp"
#include "ope/reference.hpp"

using namespace ope;

namespace {

constexpr std::uint64_t kSeed = 20240607;

struct Outcome {
  bool pass = true;
  std::ostringstream detail;
  void require(bool ok, const std::string& what) {
    if (!ok) pass = false;
    detail << (ok ? "" : "[x] ") << what << "; ";
  }
};

int failures = 0;

template <class F>
void criterion(int id, const char* title, double budget_seconds, F&& body) {
  const auto start = std::chrono::steady_clock::now();
  Outcome o;
  try {
    body(o);
  } catch (const std::exception& e) {
    o.pass = false;
    o.detail << "exception: " << e.what();
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (budget_seconds > 0 && secs > budget_seconds) o.require(false, "runtime over budget");
  if (!o.pass) ++failures;
  std::printf("%s criterion %d (%s) [%.1fs]: %s\n", o.pass ? "PASS" : "FAIL", id, title, secs, o.detail.str().c_str());
  std::fflush(stdout);
}

std::string num(double v, int precision = 4) {
  std::ostringstream os;
  os.precision(precision);
  os << v;
  return os.str();
}

SequentialSweepConfig reference_config(std::vector<std::string> estimators, std::vector<std::string> ks) {
  SequentialSweepConfig c;
  c.estimators = std::move(estimators);
  c.ks = std::move(ks);
  c.target = std::make_shared<TabularPolicy>(reference_target_policy());
  c.behavior = std::make_shared<TabularPolicy>(reference_behavior_policy());
  c.policy_class = std::make_shared<ParametricHistoryPolicy>(tabular_policy_class(4, 2));
  c.q = exact_q_function(reference_mdp_spec(), reference_target_policy(), 1.0);
  c.q_offset = 3.0;
  return c;
}

SweepReport sweep(const SweepProblem& p, std::size_t n, std::size_t reps, std::uint64_t seed) {
  SweepOptions o;
  o.ns = {n};
  o.replications = reps;
  o.seed = seed;
  return run_sweep(p, o);
}

bool all_valid(const SweepReport& r) {
  for (const SweepRow& row : r.rows)
    if (!row.valid) return false;
  return true;
}

}  // namespace

int main() {
  // 1-2: two-context toy bandit.
  const BanditSpec bandit = toy_bandit_spec();
  SweepReport bandit_report;
  criterion(1, "bandit MSE ordering", 60, [&](Outcome& o) {
    const BanditSweepProblem problem(bandit);
    SweepOptions opt;
    opt.ns = {50, 1000};
    opt.replications = 10000;
    opt.seed = kSeed;
    bandit_report = run_sweep(problem, opt);
    const SweepColumn oracle{"oracle", "oracle"}, ca{"context_agnostic", "0"}, cd{"context_dependent", "0"};
    const PairedDifference ca_cd = bandit_report.mse_difference(ca, cd, 1000);
    const PairedDifference or_ca = bandit_report.mse_difference(oracle, ca, 1000);
    o.require(ca_cd.z() >= 2.0, "MSE(CA)-MSE(CD) z=" + num(ca_cd.z()));
    o.require(or_ca.z() >= 2.0, "MSE(oracle)-MSE(CA) z=" + num(or_ca.z()));
    for (const SweepColumn& c : {oracle, ca, cd}) {
      const SweepRow& r = bandit_report.row(c.estimator, c.k, 1000);
      o.require(std::abs(r.bias) <= 4.0 * r.bias_se,
                c.estimator + " bias " + num(r.bias) + " (" + num(std::abs(r.bias) / r.bias_se, 3) + " SE)");
    }
  });
  criterion(2, "bandit small-sample bias", 60, [&](Outcome& o) {
    if (bandit_report.rows.empty()) throw std::runtime_error("bandit sweep unavailable");
    const PairedDifference d =
        bandit_report.abs_bias_difference({"context_dependent", "0"}, {"oracle", "oracle"}, 50);
    o.require(d.z() >= 1.0, "|bias(CD)|-|bias(oracle)| = " + num(d.difference) + " z=" + num(d.z()));
  });

  // 3: CartPole ground truth.
  criterion(3, "cartpole ground truth", 300, [&](Outcome& o) {
    const CartPoleSpec spec;
    const MonteCarloEstimate mc =
        monte_carlo_value(spec, cartpole_policy(spec.target_logit_scale), 100000, 1.0, kSeed);
    o.require(mc.value >= 91.0 && mc.value <= 94.8,
              "value " + num(mc.value, 6) + " +- " + num(mc.standard_error, 3) + ", target [91.0, 94.8]");
  });

  // 4-7: one paired sweep over estimators and k on the reference MDP.
  const SequentialSweepProblem seq(reference_mdp_spec(),
                                   reference_config({"ois", "sis", "dr", "dr_offset", "mis"},
                                                    {"oracle", "0", "1", "2"}));
  SweepReport seq_report;
  const auto start = std::chrono::steady_clock::now();
  bool seq_ok = true;
  std::string seq_error;
  try {
    seq_report = sweep(seq, 1000, 5000, kSeed);
  } catch (const std::exception& e) {
    seq_ok = false;
    seq_error = e.what();
  }
  const double seq_secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::printf("     shared sweep for criteria 4-7: %.1fs\n", seq_secs);
  auto vdiff = [&](const std::string& est, const std::string& a, const std::string& b) {
    return seq_report.variance_difference({est, a}, {est, b}, 1000);
  };
  auto need_sweep = [&](Outcome& o) {
    if (!seq_ok) throw std::runtime_error(seq_error);
    o.require(seq_secs <= 600, "shared sweep within 10 min");
    o.require(all_valid(seq_report), "no invalid cells");
  };

  criterion(4, "IS variance non-increasing in k", 0, [&](Outcome& o) {
    need_sweep(o);
    for (const char* est : {"ois", "sis"}) {
      const std::string e = est;
      const PairedDifference d0 = vdiff(e, "0", "oracle"), d1 = vdiff(e, "1", "0"), d2 = vdiff(e, "2", "1");
      o.require(d0.z() <= -2.0, e + " var(0)-var(oracle) z=" + num(d0.z()));
      o.require(d1.z() <= 2.0, e + " var(1)-var(0) z=" + num(d1.z()));
      o.require(d2.z() <= 2.0, e + " var(2)-var(1) z=" + num(d2.z()));
    }
  });
  criterion(5, "DR with exact Q unchanged in k", 0, [&](Outcome& o) {
    need_sweep(o);
    const std::vector<std::string> ks = {"oracle", "0", "1", "2"};
    for (std::size_t i = 0; i < ks.size(); ++i)
      for (std::size_t j = i + 1; j < ks.size(); ++j) {
        const PairedDifference d = vdiff("dr", ks[j], ks[i]);
        o.require(std::abs(d.z()) <= 2.0, "var(" + ks[j] + ")-var(" + ks[i] + ") z=" + num(d.z()));
      }
  });
  criterion(6, "DR with offset Q improves at k=1", 0, [&](Outcome& o) {
    need_sweep(o);
    const PairedDifference d = vdiff("dr_offset", "1", "oracle");
    o.require(d.z() <= -2.0, "var(1)-var(oracle) = " + num(d.difference) + " z=" + num(d.z()));
  });
  criterion(7, "MIS variance non-decreasing in k", 0, [&](Outcome& o) {
    need_sweep(o);
    const PairedDifference d1 = vdiff("mis", "1", "0"), d2 = vdiff("mis", "2", "1"), d20 = vdiff("mis", "2", "0");
    o.require(d1.z() >= -2.0, "var(1)-var(0) z=" + num(d1.z()));
    o.require(d2.z() >= -2.0, "var(2)-var(1) z=" + num(d2.z()));
    o.require(d20.z() >= 2.0, "var(2)-var(0) z=" + num(d20.z()));
  });

  // 8: MIS and DRL agree without ridge.
  criterion(8, "MIS equals DRL", 60, [&](Outcome& o) {
    const auto features = std::make_shared<TabularStateActionFeatures>(4, 2);
    const TabularPolicy e = reference_target_policy();
    double worst = 0.0;
    for (std::uint64_t s = 0; s < 20; ++s) {
      const Dataset d = sample_trajectories(reference_mdp_spec(), reference_behavior_policy(), 1000,
                                            substream_seed(kSeed, 8, s));
      const DRLResult r = fit_drl_linear(d, e, features, 0.0, 1.0);
      worst = std::max(worst, std::abs(r.estimate - mis(d, r.ratios, 1.0)));
    }
    o.require(worst <= 1e-8, "max |mis - drl| = " + num(worst, 3));
  });

  // 9: projection variance predicts the estimated-ratio OIS variance.
  criterion(9, "projection variance oracle", 0, [&](Outcome& o) {
    const TabularMDPSpec spec = reference_mdp_spec();
    const TabularPolicy b = reference_behavior_policy(), e = reference_target_policy();
    const Dataset big = sample_trajectories(spec, b, 400000, substream_seed(kSeed, 9));
    const ProjectionReport p =
        projection_variance(big, e, b, tabular_softmax_policy(b), CoreKind::ois, nullptr, 1.0);
    const SequentialSweepProblem problem(spec, reference_config({"ois"}, {"0"}));
    const SweepReport r = sweep(problem, 2000, 5000, substream_seed(kSeed, 90));
    const SweepRow& row = r.row("ois", "0", 2000);
    const double predicted = p.var_projected / 2000.0;
    const double rel = std::abs(predicted / row.variance - 1.0);
    o.require(rel <= 0.15, "predicted " + num(predicted, 5) + " vs empirical " + num(row.variance, 5) + " (+-" +
                               num(row.variance_se, 2) + "), rel err " + num(rel, 3));
  });

  // 10: degenerate cases.
  criterion(10, "degeneration suite", 0, [&](Outcome& o) {
    {
      const Dataset d = sample_bandit_dataset(bandit, 500, substream_seed(kSeed, 10));
      const TabularPolicy pb = TabularPolicy::context_agnostic(bandit.behavior_probs);
      const TabularPolicy pe = TabularPolicy::context_agnostic(bandit.target_probs);
      const ISWeights w = compute_weights(d, pe, pb);
      const double b = bandit_is(d, BanditMode::oracle, bandit);
      o.require(ois(d, w, 1.0) == b && sis(d, w, 1.0) == b, "T=0: OIS = SIS = bandit IS");
    }
    const TabularMDPSpec spec = reference_mdp_spec();
    const TabularPolicy b = reference_behavior_policy(), e = reference_target_policy();
    const Dataset d = sample_trajectories(spec, b, 2000, substream_seed(kSeed, 11));
    {
      const ISWeights w = compute_weights(d, e, b);
      o.require(dr(d, w, QFunction::zero(), e, 1.0) == sis(d, w, 1.0), "Q=0: DR = SIS");
    }
    {
      const MISRatioModel m = fit_mis_ratios(d, e, HistoryOneHotFeatures::fit(d, spec.horizon), 0.0);
      std::map<std::vector<int>, double> counts;
      for (const Trajectory& tr : d.trajectories) {
        std::vector<int> key;
        for (std::size_t t = 0; t <= spec.horizon; ++t) {
          key.push_back(tr.discrete_state(t));
          counts[key] += 1;
          key.push_back(tr.actions[t]);
          counts[key] += 1;
        }
      }
      double worst = 0.0;
      for (std::size_t i = 0; i < d.size(); ++i) {
        std::vector<int> key;
        double lambda = 1.0;
        for (std::size_t t = 0; t <= spec.horizon; ++t) {
          key.push_back(d[i].discrete_state(t));
          const double nh = counts[key];
          key.push_back(d[i].actions[t]);
          lambda *= e(d[i].discrete_state(t), d[i].actions[t]) * nh / counts[key];
          worst = std::max(worst, std::abs(m.weights(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(t)) -
                                           lambda));
        }
      }
      o.require(worst <= 1e-6, "k=T: max |w - lambda| = " + num(worst, 3));
    }
    {
      ParametricHistoryPolicy p = tabular_policy_class(4, 2, 2);
      Rng rng = make_rng(kSeed);
      std::normal_distribution<double> z;
      Eigen::VectorXd theta(static_cast<Eigen::Index>(p.dimension()));
      for (Eigen::Index j = 0; j < theta.size(); ++j) theta[j] = z(rng);
      p.set_theta(theta);
      auto loglik = [&](const Eigen::VectorXd& th, const Trajectory& tr) {
        const ParametricHistoryPolicy q = p.with_theta(th);
        double total = 0.0;
        for (std::size_t t = 0; t < tr.length(); ++t) total += q.log_probability(HistoryWindow(tr, t, 2), tr.actions[t]);
        return total;
      };
      double worst = 0.0;
      for (std::size_t i = 0; i < 10; ++i) {
        const Eigen::VectorXd s = score_vector(p, d[i]);
        Eigen::VectorXd fd(s.size());
        for (Eigen::Index j = 0; j < s.size(); ++j) {
          Eigen::VectorXd up = theta, down = theta;
          up[j] += 1e-5;
          down[j] -= 1e-5;
          fd[j] = (loglik(up, d[i]) - loglik(down, d[i])) / 2e-5;
        }
        worst = std::max(worst, (s - fd).norm() / std::max(1.0, s.norm()));
      }
      o.require(worst <= 1e-6, "score vs finite differences rel err " + num(worst, 3));
    }
  });

  // 11: history selector.
  criterion(11, "history selector", 0, [&](Outcome& o) {
    const HistorySelection worked = select_history({0, 1, 2}, {1.0, 0.9, 0.89}, 100);
    o.require(worked.h_star == 2, "worked example h*=" + std::to_string(worked.h_star) + " (objectives " +
                                      num(worked.objectives[0], 5) + ", " + num(worked.objectives[1], 5) + ", " +
                                      num(worked.objectives[2], 5) + ")");
    const HistorySelection flat = select_history({0, 1, 2}, {0.5, 0.5, 0.5}, 100);
    o.require(flat.h_star == 0, "constant variance h*=" + std::to_string(flat.h_star) + " (expected 0)");

    const TabularMDPSpec spec = reference_mdp_spec();
    const TabularPolicy b = reference_behavior_policy(), e = reference_target_policy();
    const std::size_t n = 5000;
    const Dataset d = sample_trajectories(spec, b, n, substream_seed(kSeed, 12));
    SelectHistoryOptions opt;
    opt.seed = substream_seed(kSeed, 13);
    const HistorySelection sel = select_history(d, e, tabular_policy_class(4, 2), nullptr, {0, 1, 2}, opt);
    const SequentialSweepProblem problem(spec, reference_config({"sis"}, {"0", "1", "2"}));
    const SweepReport r = sweep(problem, n, 1000, substream_seed(kSeed, 14));
    std::string best = "0";
    for (const char* k : {"1", "2"})
      if (r.row("sis", k, n).mse < r.row("sis", best, n).mse) best = k;
    const std::string chosen = std::to_string(sel.h_star);
    const PairedDifference gap = r.mse_difference({"sis", chosen}, {"sis", best}, n);
    o.require(chosen == best || gap.difference <= gap.se,
              "n=5000 h*=" + chosen + ", best k=" + best + ", MSE gap " + num(gap.difference, 3) + " (SE " +
                  num(gap.se, 3) + ")");
  });

  std::printf("%d criterion(s) failed\n", failures);
  return failures == 0 ? 0 : 1;
}
