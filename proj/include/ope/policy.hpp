#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "ope/common.hpp"
#include "ope/trajectory.hpp"

namespace ope {

/// View of H_{t-k:t} inside a trajectory. Lags that reach before t = 0 are
/// padded: the state repeats S_0 and the action is kNullAction. The view only
/// reads actions strictly before t, so it is valid while a trajectory is being
/// generated.
class HistoryWindow {
 public:
  HistoryWindow(const Trajectory& trajectory, std::size_t t, std::size_t k)
      : trajectory_(&trajectory), t_(t), k_(k) {}

  std::size_t t() const { return t_; }
  std::size_t k() const { return k_; }
  const Trajectory& trajectory() const { return *trajectory_; }

  bool padded(std::size_t lag) const { return lag > t_; }

  std::span<const double> lag_state(std::size_t lag) const {
    return trajectory_->state(padded(lag) ? 0 : t_ - lag);
  }
  int lag_discrete_state(std::size_t lag) const {
    return trajectory_->discrete_state(padded(lag) ? 0 : t_ - lag);
  }
  /// Action taken `lag` >= 1 steps ago, kNullAction when padded.
  int lag_action(std::size_t lag) const {
    return padded(lag) ? kNullAction : trajectory_->actions[t_ - lag];
  }

  std::span<const double> current_state() const { return trajectory_->state(t_); }
  int current_discrete_state() const { return trajectory_->discrete_state(t_); }

 private:
  const Trajectory* trajectory_;
  std::size_t t_;
  std::size_t k_;
};

/// A (possibly history-dependent) stochastic policy over a finite action set.
class Policy {
 public:
  virtual ~Policy() = default;

  virtual std::size_t num_actions() const = 0;

  /// Number of lags the policy conditions on (0 for Markov policies).
  virtual std::size_t history_length() const { return 0; }

  /// Writes pi(. | H_{t-k:t}) into `out` (size num_actions()).
  virtual void probabilities(const HistoryWindow& window, std::span<double> out) const = 0;

  double probability(const HistoryWindow& window, int action) const;

  /// Convenience: probabilities at step t of a trajectory using this policy's
  /// own history length.
  std::vector<double> probabilities_at(const Trajectory& trajectory, std::size_t t) const;
};

/// Throws ValidationError unless `probs` is a probability vector within
/// kProbabilityTolerance.
void check_probability_vector(std::span<const double> probs, const char* what);

}  // namespace ope
