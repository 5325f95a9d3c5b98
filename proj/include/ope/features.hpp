#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "ope/policy.hpp"
#include "ope/trajectory.hpp"

namespace ope {

/// Context features psi_i(S_{t-i}, A_{t-i}) for one lag block of a parametric
/// history policy. Lag 0 sees only the current state; lags >= 1 also see the
/// action taken at that lag. A null lag action (padding, absorbed tail)
/// yields the zero vector.
class FeatureBasis {
 public:
  virtual ~FeatureBasis() = default;
  virtual std::string id() const = 0;
  virtual std::size_t dim(std::size_t lag) const = 0;
  virtual void eval(std::size_t lag, std::span<const double> state, int lag_action,
                    std::span<double> out) const = 0;
};

/// lag 0: one-hot(state); lag i: one-hot(state, lag action).
class TabularBasis final : public FeatureBasis {
 public:
  TabularBasis(std::size_t num_states, std::size_t num_actions);
  std::string id() const override;
  std::size_t dim(std::size_t lag) const override;
  void eval(std::size_t lag, std::span<const double> state, int lag_action,
            std::span<double> out) const override;

 private:
  std::size_t num_states_;
  std::size_t num_actions_;
};

/// lag 0: (1, state); lag i: (state, indicators of lag action 1..A-1).
class LinearBasis final : public FeatureBasis {
 public:
  LinearBasis(std::size_t state_dim, std::size_t num_actions);
  std::string id() const override;
  std::size_t dim(std::size_t lag) const override;
  void eval(std::size_t lag, std::span<const double> state, int lag_action,
            std::span<double> out) const override;

 private:
  std::size_t state_dim_;
  std::size_t num_actions_;
};

/// Monomials of the state up to a total degree. Lag 0 includes the constant;
/// lags >= 1 drop it and append lag-action indicators. Growing the degree with
/// n gives the sieve policy classes.
class PolynomialBasis final : public FeatureBasis {
 public:
  PolynomialBasis(std::size_t state_dim, std::size_t degree, std::size_t num_actions);
  std::string id() const override;
  std::size_t dim(std::size_t lag) const override;
  void eval(std::size_t lag, std::span<const double> state, int lag_action,
            std::span<double> out) const override;
  std::size_t degree() const { return degree_; }

 private:
  std::size_t state_dim_;
  std::size_t degree_;
  std::size_t num_actions_;
  std::vector<std::vector<unsigned>> exponents_;  // all monomials incl. the constant first
};

/// Rebuilds a basis from its id() string.
std::shared_ptr<const FeatureBasis> make_basis(const std::string& id);

/// Sieve schedule: ceil(n^{1/4}) capped at max_degree (and at least 1).
std::size_t sieve_degree(std::size_t n, std::size_t max_degree);

/// Sparse feature vector as (index, value) pairs.
using SparseVector = std::vector<std::pair<std::size_t, double>>;

/// State-action features phi_t(H_{t-k:t}, a) for marginal ratio and linear
/// Q-function models. `window` supplies S_t and the lags; `action` stands in
/// for A_t.
class StateActionFeatures {
 public:
  virtual ~StateActionFeatures() = default;
  virtual std::string id() const = 0;
  virtual std::size_t history_length() const = 0;
  virtual std::size_t dim(std::size_t t) const = 0;
  virtual void eval(const HistoryWindow& window, int action, SparseVector& out) const = 0;
};

/// phi == 1.
class ConstantFeatures final : public StateActionFeatures {
 public:
  std::string id() const override { return "constant"; }
  std::size_t history_length() const override { return 0; }
  std::size_t dim(std::size_t) const override { return 1; }
  void eval(const HistoryWindow& window, int action, SparseVector& out) const override;
};

/// One-hot over all (state, action) cells of a finite MDP.
class TabularStateActionFeatures final : public StateActionFeatures {
 public:
  TabularStateActionFeatures(std::size_t num_states, std::size_t num_actions);
  std::string id() const override;
  std::size_t history_length() const override { return 0; }
  std::size_t dim(std::size_t) const override { return num_states_ * num_actions_; }
  void eval(const HistoryWindow& window, int action, SparseVector& out) const override;

 private:
  std::size_t num_states_;
  std::size_t num_actions_;
};

/// One-hot over the (H_{t-k:t}, A_t) patterns observed at each t in a
/// reference dataset; unseen patterns map to the zero vector. With k equal to
/// the horizon these are saturated history features. Before t = k the
/// available (shorter) history is used, which is in bijection with the padded
/// window.
class HistoryOneHotFeatures final : public StateActionFeatures {
 public:
  static std::shared_ptr<HistoryOneHotFeatures> fit(const Dataset& data, std::size_t k);

  std::string id() const override;
  std::size_t history_length() const override { return k_; }
  std::size_t dim(std::size_t t) const override { return t < index_.size() ? index_[t].size() : 0; }
  void eval(const HistoryWindow& window, int action, SparseVector& out) const override;

 private:
  struct KeyHash {
    std::size_t operator()(const std::vector<int>& key) const noexcept;
  };
  using KeyIndex = std::unordered_map<std::vector<int>, std::size_t, KeyHash>;

  explicit HistoryOneHotFeatures(std::size_t k) : k_(k) {}
  static void make_key(const HistoryWindow& window, std::size_t k, int action, std::vector<int>& key);

  std::size_t k_;
  std::vector<KeyIndex> index_;
};

}  // namespace ope
