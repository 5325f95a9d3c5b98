#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ope/environments.hpp"
#include "ope/estimators.hpp"
#include "ope/policies.hpp"

namespace ope {

enum class CoreKind { ois, sis, dr };

std::string to_string(CoreKind kind);
CoreKind parse_core_kind(const std::string& name);

/// Per-trajectory term of an IS-family estimator (`q` is required for DR).
Eigen::VectorXd core_terms(CoreKind kind, const Dataset& data, const ISWeights& weights, const Policy& target,
                           const QFunction* q, double gamma);

struct ProjectionReport {
  std::string core;
  std::size_t k = 0;
  std::size_t n = 0;
  double var_raw = 0.0;             // plug-in Var_n(X)
  Eigen::VectorXd cross_moment;     // E_n[(X - mean X) s]
  Eigen::MatrixXd fisher;           // E_n[s s^T], ridged when needed
  double fisher_min_eigenvalue = 0.0;
  double ridge = 0.0;
  double var_projected = 0.0;       // var_raw - c^T I^{-1} c
};

/// X is the core under `weight_behavior` (the true behavior for the oracle
/// weights) and s is the score of `score_policy`. var_projected is the
/// asymptotic n Var of the estimator whose ratios are fitted in the class of
/// `score_policy`.
ProjectionReport projection_variance(const Dataset& data, const Policy& target, const Policy& weight_behavior,
                                     const ParametricHistoryPolicy& score_policy, CoreKind core,
                                     const QFunction* q, double gamma);

/// Same decomposition for precomputed terms and scores (n x dim).
ProjectionReport project_terms(const Eigen::VectorXd& terms, const Eigen::MatrixXd& scores);

// ---------------------------------------------------------------------------
// Replicated sweeps

/// One (estimator, k) column of a sweep; k is "oracle" or a history length.
struct SweepColumn {
  std::string estimator;
  std::string k;
  bool operator==(const SweepColumn&) const = default;
};

/// A data-generating process plus the estimators evaluated on each
/// replication. evaluate() draws one dataset and returns one estimate per
/// column, NaN marking a failed replication.
class SweepProblem {
 public:
  virtual ~SweepProblem() = default;
  virtual std::vector<SweepColumn> columns() const = 0;
  virtual double truth() const = 0;
  virtual double truth_se() const { return 0.0; }
  virtual std::vector<double> evaluate(std::size_t n, std::uint64_t seed) const = 0;
};

struct SweepRow {
  SweepColumn column;
  std::size_t n = 0;
  std::size_t replications = 0;  // successful ones
  std::size_t failures = 0;
  bool valid = true;             // failures <= 1% of attempts
  double mean = 0.0;
  double bias = 0.0, bias_se = 0.0;
  double variance = 0.0, variance_se = 0.0;  // plug-in variance over replications
  double mse = 0.0, mse_se = 0.0;
};

struct PairedDifference {
  double difference = 0.0;  // statistic(a) - statistic(b)
  double se = 0.0;          // jackknife over shared replications
  /// difference / se; +-inf for a nonzero difference with zero se.
  double z() const;
};

struct SweepReport {
  double truth = 0.0;
  double truth_se = 0.0;
  std::vector<SweepRow> rows;
  /// Raw estimates: estimates[n index](replication, column), NaN on failure.
  std::vector<std::size_t> ns;
  std::vector<SweepColumn> columns;
  std::vector<Eigen::MatrixXd> estimates;

  const SweepRow& row(const std::string& estimator, const std::string& k, std::size_t n) const;
  /// Variance difference between two cells at the same n, paired by replication.
  PairedDifference variance_difference(const SweepColumn& a, const SweepColumn& b, std::size_t n) const;
  /// |bias| difference between two cells at the same n, paired by replication.
  PairedDifference abs_bias_difference(const SweepColumn& a, const SweepColumn& b, std::size_t n) const;
  PairedDifference mse_difference(const SweepColumn& a, const SweepColumn& b, std::size_t n) const;
};

struct SweepOptions {
  std::vector<std::size_t> ns;
  std::size_t replications = 100;
  std::uint64_t seed = 0;
  std::size_t workers = 0;  // 0: all cores
  double max_failure_fraction = 0.01;
};

/// Runs every replication on its own substream. All columns of a replication
/// share one dataset, which makes between-column comparisons paired.
SweepReport run_sweep(const SweepProblem& problem, const SweepOptions& options);

/// Row statistics from a vector of estimates (NaN = failure).
SweepRow summarize_estimates(const Eigen::VectorXd& estimates, double truth, double truth_se,
                             double max_failure_fraction = 0.01);

/// Two-context toy bandit: columns oracle, context_agnostic, context_dependent.
class BanditSweepProblem final : public SweepProblem {
 public:
  explicit BanditSweepProblem(BanditSpec spec);
  std::vector<SweepColumn> columns() const override;
  double truth() const override;
  std::vector<double> evaluate(std::size_t n, std::uint64_t seed) const override;

 private:
  BanditSpec spec_;
};

/// Sequential problem on a tabular MDP or CartPole.
///
/// Estimators: "ois", "sis", "dr" (with `q`), "dr_offset" (with q shifted by
/// `q_offset`) and "mis" (history one-hot ratios; tabular only). k = "oracle"
/// uses the true behavior for IS ratios and the exact marginal ratios for
/// MIS; a number k fits the behavior policy in the k-lag class of
/// `policy_class` on the same data (or MIS features with k lags).
struct SequentialSweepConfig {
  std::vector<std::string> estimators;
  std::vector<std::string> ks;  // "oracle", "0", "1", ...
  std::shared_ptr<const Policy> target;
  std::shared_ptr<const Policy> behavior;
  std::shared_ptr<const ParametricHistoryPolicy> policy_class;
  std::optional<QFunction> q;
  double q_offset = 0.0;
  double ridge = kDefaultRidge;
  double gamma = 1.0;
  FitOptions fit;
};

class SequentialSweepProblem final : public SweepProblem {
 public:
  SequentialSweepProblem(TabularMDPSpec spec, SequentialSweepConfig config);
  SequentialSweepProblem(CartPoleSpec spec, SequentialSweepConfig config, double truth, double truth_se);

  std::vector<SweepColumn> columns() const override;
  double truth() const override { return truth_; }
  double truth_se() const override { return truth_se_; }
  std::vector<double> evaluate(std::size_t n, std::uint64_t seed) const override;

  const SequentialSweepConfig& config() const { return config_; }

 private:
  void check_config() const;
  Dataset sample(std::size_t n, std::uint64_t seed) const;

  std::optional<TabularMDPSpec> tabular_;
  std::optional<CartPoleSpec> cartpole_;
  SequentialSweepConfig config_;
  double truth_ = 0.0;
  double truth_se_ = 0.0;
  std::vector<Eigen::MatrixXd> oracle_marginal_ratios_;
};

// ---------------------------------------------------------------------------
// History length selection

enum class VarianceMethod { sampling_formula, bootstrap };

std::string to_string(VarianceMethod method);
VarianceMethod parse_variance_method(const std::string& name);

struct HistorySelection {
  std::size_t n = 0;
  std::vector<std::size_t> candidates;
  std::vector<double> variances;   // Var_hat(h)
  std::vector<double> objectives;  // 2 n Var_hat(h) - h log n
  std::size_t h_star = 0;
  std::string method;
};

/// Minimizes 2 n var(h) - h log(n); ties go to the smaller h.
HistorySelection select_history(const std::vector<std::size_t>& candidates, const std::vector<double>& variances,
                                std::size_t n);

struct SelectHistoryOptions {
  CoreKind estimator = CoreKind::sis;
  VarianceMethod method = VarianceMethod::bootstrap;
  std::size_t bootstrap_resamples = 200;
  std::uint64_t seed = 0;
  std::size_t workers = 0;
  double gamma = 1.0;
  FitOptions fit;
};

/// Estimates the variance of the k-lag estimated-ratio estimator for each
/// candidate and selects h. The bootstrap refits the behavior policy on every
/// resample; the sampling formula uses the empirical influence function.
HistorySelection select_history(const Dataset& data, const Policy& target,
                                const ParametricHistoryPolicy& policy_class, const QFunction* q,
                                const std::vector<std::size_t>& candidates, const SelectHistoryOptions& options);

// ---------------------------------------------------------------------------
// Coverage

struct CoverageReport {
  double r_max = 0.0;      // max |R_t|
  double c_hat = 0.0;      // max per-step ratio
  double eps_hat = 1.0;    // min behavior probability of an observed action
  std::optional<double> u_max;  // max |R_t - Q_t + gamma Q_{t+1}(pi_e)| when Q is given
};

CoverageReport coverage_diagnostics(const Dataset& data, const Policy& target, const Policy& behavior,
                                    const QFunction* q = nullptr, double gamma = 1.0);

}  // namespace ope
