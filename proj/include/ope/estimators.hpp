#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ope/environments.hpp"
#include "ope/features.hpp"
#include "ope/policy.hpp"
#include "ope/trajectory.hpp"

namespace ope {

/// Cumulative importance ratios lambda_t = prod_{u<=t} pi_e / pi_b for every
/// trajectory. Steps with kNullAction contribute a ratio of 1.
struct ISWeights {
  Eigen::MatrixXd lambda;  // n x (T + 1)
  std::string source;      // "oracle" or "estimated(k)"
  double coverage = 0.0;   // C_hat: largest observed per-step ratio
  double min_behavior_probability = 1.0;

  std::size_t size() const { return static_cast<std::size_t>(lambda.rows()); }
  /// lambda_{t-1} with lambda_{-1} = 1.
  double previous(std::size_t i, std::size_t t) const {
    return t == 0 ? 1.0 : lambda(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(t - 1));
  }
};

/// Throws EstimationError when an observed action has behavior probability 0.
ISWeights compute_weights(const Dataset& data, const Policy& target, const Policy& behavior,
                          std::string source = "oracle");

/// Per-step value model Q_t. Evaluation uses a window of the model's own
/// history length. A nonzero offset is added everywhere, which gives a
/// controlled misspecification.
class QFunction {
 public:
  enum class Mode { zero, tabular, linear };

  static QFunction zero();
  /// tables[t](s, a), t = 0..T.
  static QFunction tabular(std::vector<Eigen::MatrixXd> tables);
  static QFunction linear(std::shared_ptr<const StateActionFeatures> features,
                          std::vector<Eigen::VectorXd> coefficients);

  QFunction with_offset(double offset) const;

  Mode mode() const { return mode_; }
  double offset() const { return offset_; }
  std::size_t history_length() const;
  const std::vector<Eigen::MatrixXd>& tables() const { return tables_; }

  double operator()(const Trajectory& trajectory, std::size_t t, int action) const;

 private:
  Mode mode_ = Mode::zero;
  double offset_ = 0.0;
  std::vector<Eigen::MatrixXd> tables_;
  std::shared_ptr<const StateActionFeatures> features_;
  std::vector<Eigen::VectorXd> coefficients_;
};

/// Q^{pi_e}_t by backward induction on the known model (Markov target).
QFunction exact_q_function(const TabularMDPSpec& spec, const Policy& target, double gamma);

// Per-trajectory estimator terms; each estimate is the mean of its terms.

/// lambda_T G_T
Eigen::VectorXd ois_terms(const Dataset& data, const ISWeights& weights, double gamma);
/// sum_t gamma^t lambda_t R_t
Eigen::VectorXd sis_terms(const Dataset& data, const ISWeights& weights, double gamma);
/// sum_t gamma^t [lambda_t (R_t - Q_t(S_t, A_t)) + lambda_{t-1} sum_a pi_e(a) Q_t(S_t, a)]
Eigen::VectorXd dr_terms(const Dataset& data, const ISWeights& weights, const QFunction& q,
                         const Policy& target, double gamma);

double ois(const Dataset& data, const ISWeights& weights, double gamma);
double sis(const Dataset& data, const ISWeights& weights, double gamma);
double dr(const Dataset& data, const ISWeights& weights, const QFunction& q, const Policy& target,
          double gamma);

enum class BanditMode { oracle, context_agnostic, context_dependent };

std::string to_string(BanditMode mode);
BanditMode parse_bandit_mode(const std::string& name);

/// E_n[pi_e(A) / pi_b(.) R] with the behavior probability taken from the
/// spec (oracle), from n(a)/n, or from n(s, a)/n(s).
double bandit_is(const Dataset& data, BanditMode mode, const BanditSpec& spec);

inline constexpr double kDefaultRidge = 1e-8;

/// Linear marginal ratio model w_t = phi_t^T alpha_t fitted by the forward
/// recursion alpha_t = Sigma_t^{-1} E_n[sum_a pi_e(a) phi_t(., a) w_{t-1}],
/// Sigma_t = E_n[phi_t phi_t^T] + ridge I.
struct MISRatioModel {
  std::shared_ptr<const StateActionFeatures> features;
  std::vector<Eigen::VectorXd> alphas;
  double ridge = kDefaultRidge;
  std::size_t k = 0;
  Eigen::MatrixXd weights;         // fitted w_t on the fitting data, n x (T + 1)
  double max_mean_deviation = 0.0;  // max_t |E_n[w_t] - 1|
};

/// Throws EstimationError for a singular Sigma_t when ridge is 0.
MISRatioModel fit_mis_ratios(const Dataset& data, const Policy& target,
                             std::shared_ptr<const StateActionFeatures> features,
                             double ridge = kDefaultRidge);

/// Ratios of a fitted model evaluated on any dataset.
Eigen::MatrixXd mis_weights(const Dataset& data, const MISRatioModel& model);

Eigen::VectorXd mis_terms(const Dataset& data, const Eigen::MatrixXd& weights, double gamma);
double mis(const Dataset& data, const MISRatioModel& model, double gamma);

/// DR form with the linear-sieve ratios and a linear-sieve Q fitted by the
/// backward recursion beta_t = Sigma_t^{-1} E_n[phi_t (R_t + gamma Q_{t+1}(S_{t+1}, pi_e))].
struct DRLResult {
  double estimate = 0.0;
  QFunction q;
  MISRatioModel ratios;
};

DRLResult fit_drl_linear(const Dataset& data, const Policy& target,
                         std::shared_ptr<const StateActionFeatures> features, double ridge, double gamma);
double drl_linear(const Dataset& data, const Policy& target,
                  std::shared_ptr<const StateActionFeatures> features, double ridge, double gamma);

/// d^{pi_e}_t(s, a) / d^{pi_b}_t(s, a) from exact forward recursions; 0 where
/// the behavior marginal vanishes.
std::vector<Eigen::MatrixXd> exact_marginal_ratios(const TabularMDPSpec& spec, const Policy& target,
                                                   const Policy& behavior);

/// Oracle marginal ratios looked up on a tabular dataset.
Eigen::MatrixXd tabulate_marginal_ratios(const Dataset& data, const std::vector<Eigen::MatrixXd>& ratios);

struct EstimateDiagnostics {
  std::string kind;
  std::string k;  // "oracle" or the history length
  std::size_t n = 0;
  double coverage = 0.0;
  double weight_concentration = 0.0;  // sum lambda_T^2 / (sum lambda_T)^2
  double effective_sample_size = 0.0;  // its reciprocal
  double ridge = 0.0;
};

EstimateDiagnostics diagnose(const std::string& kind, const std::string& k, const ISWeights& weights,
                             double ridge = 0.0);

}  // namespace ope
