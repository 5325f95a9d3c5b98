#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ope/features.hpp"
#include "ope/policy.hpp"
#include "ope/trajectory.hpp"

namespace ope {

/// pi(a | s) from a table, or pi(a) when context-agnostic (a single row).
class TabularPolicy final : public Policy {
 public:
  /// `table` is states x actions, or 1 x actions for a context-agnostic policy.
  explicit TabularPolicy(Eigen::MatrixXd table);

  static TabularPolicy context_agnostic(const Eigen::VectorXd& probs);

  std::size_t num_actions() const override { return static_cast<std::size_t>(table_.cols()); }
  void probabilities(const HistoryWindow& window, std::span<double> out) const override;

  bool context_dependent() const { return context_dependent_; }
  const Eigen::MatrixXd& table() const { return table_; }
  double operator()(int state, int action) const {
    return table_(context_dependent_ ? state : 0, action);
  }

 private:
  Eigen::MatrixXd table_;
  bool context_dependent_;
};

enum class ActionEncoding {
  reference,  // action 0 has score 0; one parameter copy per other action
  full,       // one parameter copy per action (over-parameterized)
};

std::string to_string(ActionEncoding encoding);
ActionEncoding parse_action_encoding(const std::string& name);

/// Default uniform mixing weight delta: pi = (1 - delta) softmax + delta / |A|.
inline constexpr double kDefaultMixing = 1e-3;

/// Softmax policy over per-action linear scores with one parameter block per
/// lag: score(a) = sum_{i=0..k} theta_i(a) . psi_i(S_{t-i}, A_{t-i}). The
/// probabilities are mixed with the uniform distribution, so every action
/// has probability at least delta / |A|.
///
/// Parameters are laid out lag-major, so the parameter vector of a k' < k
/// policy is a prefix of the k policy's vector; zeroing the trailing blocks
/// reproduces the shorter-history policy exactly.
class ParametricHistoryPolicy final : public Policy {
 public:
  ParametricHistoryPolicy(std::shared_ptr<const FeatureBasis> basis, std::size_t k,
                          std::size_t num_actions, ActionEncoding encoding = ActionEncoding::reference,
                          double mixing = kDefaultMixing);

  std::size_t num_actions() const override { return num_actions_; }
  std::size_t history_length() const override { return k_; }
  void probabilities(const HistoryWindow& window, std::span<double> out) const override;

  std::size_t dimension() const { return static_cast<std::size_t>(theta_.size()); }
  std::size_t block_offset(std::size_t lag) const { return offsets_.at(lag); }
  std::size_t block_size(std::size_t lag) const { return offsets_.at(lag + 1) - offsets_.at(lag); }
  /// Parameter copies per lag-feature vector (|A| - 1 or |A|).
  std::size_t encoded_actions() const;

  const Eigen::VectorXd& theta() const { return theta_; }
  void set_theta(Eigen::VectorXd theta);
  ParametricHistoryPolicy with_theta(Eigen::VectorXd theta) const;

  double mixing() const { return mixing_; }
  /// Lower bound epsilon on every action probability.
  double floor() const { return mixing_ / static_cast<double>(num_actions_); }
  ActionEncoding encoding() const { return encoding_; }
  const FeatureBasis& basis() const { return *basis_; }
  const std::shared_ptr<const FeatureBasis>& basis_ptr() const { return basis_; }

  /// Concatenated lag features psi_0 .. psi_k for the window.
  void context_features(const HistoryWindow& window, Eigen::VectorXd& out) const;
  /// Row a holds d score(a) / d theta.
  void action_features(const HistoryWindow& window, Eigen::MatrixXd& out) const;
  std::size_t context_dimension() const { return context_dim_; }

  double log_probability(const HistoryWindow& window, int action) const;
  /// Adds d/dtheta log pi(action | window) to `score`.
  void add_score(const HistoryWindow& window, int action, Eigen::Ref<Eigen::VectorXd> score) const;

  /// The same function viewed as a member of the class with history length
  /// k >= history_length(): higher blocks are zero.
  ParametricHistoryPolicy embedded(std::size_t k) const;

 private:
  void softmax_from_context(const Eigen::VectorXd& context, Eigen::VectorXd& raw) const;
  void expand(const Eigen::VectorXd& context, Eigen::MatrixXd& out) const;

  std::shared_ptr<const FeatureBasis> basis_;
  std::size_t k_;
  std::size_t num_actions_;
  ActionEncoding encoding_;
  double mixing_;
  std::vector<std::size_t> offsets_;          // parameter block offsets, size k + 2
  std::vector<std::size_t> context_offsets_;  // lag feature offsets, size k + 2
  std::size_t context_dim_ = 0;
  Eigen::VectorXd theta_;
};

struct FitOptions {
  double gradient_tolerance = 1e-8;
  std::size_t max_iterations = 500;
};

struct FitReport {
  Eigen::VectorXd theta_hat;
  double log_likelihood = 0.0;  // E_n[sum_t log pi(A_t | H_{t-k:t})]
  double gradient_norm_at_solution = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
  std::size_t gradient_steps = 0;  // iterations that fell back from Newton
  std::size_t distinct_rows = 0;   // design rows after merging duplicates
};

struct FitResult {
  ParametricHistoryPolicy policy;
  FitReport report;
};

/// Maximum likelihood over the k-lag class of `policy_class` (its basis,
/// encoding and mixing). Starts from the template's parameters when the
/// template already has history length k, otherwise from its embedding (or
/// truncation) into the k class. Damped Newton; falls back to gradient
/// ascent with backtracking when the negative Hessian is not positive
/// definite. Non-convergence is reported, not thrown.
FitResult fit_mle(const Dataset& data, const ParametricHistoryPolicy& policy_class, std::size_t k,
                  const FitOptions& options = {});

/// E_n[sum_t log pi(A_t | H_{t-k:t})] under the policy's own history length.
double log_likelihood(const ParametricHistoryPolicy& policy, const Dataset& data);

/// Sample-frequency estimate n(s, a) / n(s) or n(a) / n. Throws
/// EstimationError naming every unvisited state when context_dependent.
TabularPolicy fit_tabular(const Dataset& data, bool context_dependent);

/// d/dtheta sum_t log pi_theta(A_t | H_{t-k:t}) for one trajectory.
Eigen::VectorXd score_vector(const ParametricHistoryPolicy& policy, const Trajectory& trajectory);

/// Per-trajectory scores stacked as rows (n x dim).
Eigen::MatrixXd score_matrix(const ParametricHistoryPolicy& policy, const Dataset& data);

struct FisherReport {
  Eigen::MatrixXd information;  // E_n[s s^T] (plus ridge when applied)
  double min_eigenvalue = 0.0;  // before any ridge
  double ridge = 0.0;           // lambda added to the diagonal, 0 when none
};

/// Empirical Fisher information E_n[s s^T]. When the smallest eigenvalue is
/// below `ridge_threshold`, `ridge` times the identity is added and recorded.
FisherReport fisher_information(const ParametricHistoryPolicy& policy, const Dataset& data,
                                double ridge_threshold = 1e-10, double ridge = 1e-8);

}  // namespace ope
