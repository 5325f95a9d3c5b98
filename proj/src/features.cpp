#include "ope/features.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "ope/common.hpp"

namespace ope {

namespace {

void require_size(std::span<double> out, std::size_t n) {
  if (out.size() != n) throw ValidationError("feature buffer has the wrong size");
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) parts.push_back(cur);
  return parts;
}

std::size_t parse_size(const std::string& s) {
  std::size_t pos = 0;
  const unsigned long long v = std::stoull(s, &pos);
  if (pos != s.size()) throw ValidationError("bad integer '" + s + "' in basis id");
  return static_cast<std::size_t>(v);
}

void compositions(std::size_t pos, unsigned remaining, std::vector<unsigned>& e,
                  std::vector<std::vector<unsigned>>& out) {
  if (pos + 1 == e.size()) {
    e[pos] = remaining;
    out.push_back(e);
    return;
  }
  for (unsigned v = remaining + 1; v-- > 0;) {
    e[pos] = v;
    compositions(pos + 1, remaining - v, e, out);
  }
}

// All exponent vectors of total degree <= degree, grouped by degree.
std::vector<std::vector<unsigned>> monomials(std::size_t dim, std::size_t degree) {
  std::vector<std::vector<unsigned>> out;
  if (dim == 0) return out;
  std::vector<unsigned> e(dim, 0);
  for (unsigned d = 0; d <= degree; ++d) compositions(0, d, e, out);
  return out;
}

}  // namespace

TabularBasis::TabularBasis(std::size_t num_states, std::size_t num_actions)
    : num_states_(num_states), num_actions_(num_actions) {
  if (num_states == 0 || num_actions == 0) throw ValidationError("tabular basis needs states and actions");
}

std::string TabularBasis::id() const {
  return "tabular:" + std::to_string(num_states_) + ":" + std::to_string(num_actions_);
}

std::size_t TabularBasis::dim(std::size_t lag) const {
  return lag == 0 ? num_states_ : num_states_ * num_actions_;
}

void TabularBasis::eval(std::size_t lag, std::span<const double> state, int lag_action,
                        std::span<double> out) const {
  require_size(out, dim(lag));
  std::fill(out.begin(), out.end(), 0.0);
  const auto s = static_cast<std::size_t>(state[0]);
  if (lag == 0) {
    out[s] = 1.0;
  } else if (lag_action != kNullAction) {
    out[s * num_actions_ + static_cast<std::size_t>(lag_action)] = 1.0;
  }
}

LinearBasis::LinearBasis(std::size_t state_dim, std::size_t num_actions)
    : state_dim_(state_dim), num_actions_(num_actions) {
  if (state_dim == 0 || num_actions == 0) throw ValidationError("linear basis needs a state and actions");
}

std::string LinearBasis::id() const {
  return "linear:" + std::to_string(state_dim_) + ":" + std::to_string(num_actions_);
}

std::size_t LinearBasis::dim(std::size_t lag) const {
  return lag == 0 ? 1 + state_dim_ : state_dim_ + num_actions_ - 1;
}

void LinearBasis::eval(std::size_t lag, std::span<const double> state, int lag_action,
                       std::span<double> out) const {
  require_size(out, dim(lag));
  std::fill(out.begin(), out.end(), 0.0);
  if (lag == 0) {
    out[0] = 1.0;
    std::copy(state.begin(), state.end(), out.begin() + 1);
    return;
  }
  if (lag_action == kNullAction) return;
  std::copy(state.begin(), state.end(), out.begin());
  if (lag_action > 0) out[state_dim_ + static_cast<std::size_t>(lag_action) - 1] = 1.0;
}

PolynomialBasis::PolynomialBasis(std::size_t state_dim, std::size_t degree, std::size_t num_actions)
    : state_dim_(state_dim), degree_(degree), num_actions_(num_actions),
      exponents_(monomials(state_dim, degree)) {
  if (state_dim == 0 || num_actions == 0 || degree == 0)
    throw ValidationError("polynomial basis needs a state, actions and degree >= 1");
}

std::string PolynomialBasis::id() const {
  return "polynomial:" + std::to_string(state_dim_) + ":" + std::to_string(degree_) + ":" +
         std::to_string(num_actions_);
}

std::size_t PolynomialBasis::dim(std::size_t lag) const {
  return lag == 0 ? exponents_.size() : exponents_.size() - 1 + num_actions_ - 1;
}

void PolynomialBasis::eval(std::size_t lag, std::span<const double> state, int lag_action,
                           std::span<double> out) const {
  require_size(out, dim(lag));
  std::fill(out.begin(), out.end(), 0.0);
  if (lag > 0 && lag_action == kNullAction) return;
  const std::size_t skip = lag == 0 ? 0 : 1;
  for (std::size_t m = skip; m < exponents_.size(); ++m) {
    double v = 1.0;
    for (std::size_t j = 0; j < state_dim_; ++j)
      for (unsigned p = 0; p < exponents_[m][j]; ++p) v *= state[j];
    out[m - skip] = v;
  }
  if (lag > 0 && lag_action > 0) out[exponents_.size() - 1 + static_cast<std::size_t>(lag_action) - 1] = 1.0;
}

std::shared_ptr<const FeatureBasis> make_basis(const std::string& id) {
  const auto parts = split(id, ':');
  if (parts.size() == 3 && parts[0] == "tabular")
    return std::make_shared<TabularBasis>(parse_size(parts[1]), parse_size(parts[2]));
  if (parts.size() == 3 && parts[0] == "linear")
    return std::make_shared<LinearBasis>(parse_size(parts[1]), parse_size(parts[2]));
  if (parts.size() == 4 && parts[0] == "polynomial")
    return std::make_shared<PolynomialBasis>(parse_size(parts[1]), parse_size(parts[2]), parse_size(parts[3]));
  throw ValidationError("unknown feature basis '" + id + "'");
}

std::size_t sieve_degree(std::size_t n, std::size_t max_degree) {
  const auto d = static_cast<std::size_t>(std::ceil(std::pow(static_cast<double>(n), 0.25) - 1e-12));
  return std::clamp<std::size_t>(d, 1, std::max<std::size_t>(1, max_degree));
}

void ConstantFeatures::eval(const HistoryWindow&, int, SparseVector& out) const {
  out.assign(1, {0, 1.0});
}

TabularStateActionFeatures::TabularStateActionFeatures(std::size_t num_states, std::size_t num_actions)
    : num_states_(num_states), num_actions_(num_actions) {}

std::string TabularStateActionFeatures::id() const {
  return "tabular_sa:" + std::to_string(num_states_) + ":" + std::to_string(num_actions_);
}

void TabularStateActionFeatures::eval(const HistoryWindow& window, int action, SparseVector& out) const {
  out.clear();
  if (action == kNullAction) return;
  const auto s = static_cast<std::size_t>(window.current_discrete_state());
  out.emplace_back(s * num_actions_ + static_cast<std::size_t>(action), 1.0);
}

std::size_t HistoryOneHotFeatures::KeyHash::operator()(const std::vector<int>& key) const noexcept {
  std::size_t h = 1469598103934665603ULL;
  for (int v : key) {
    h ^= static_cast<std::size_t>(v + 2);
    h *= 1099511628211ULL;
  }
  return h;
}

void HistoryOneHotFeatures::make_key(const HistoryWindow& window, std::size_t k, int action,
                                     std::vector<int>& key) {
  key.clear();
  const std::size_t depth = std::min(k, window.t());
  for (std::size_t lag = depth; lag >= 1; --lag) {
    key.push_back(window.lag_discrete_state(lag));
    key.push_back(window.lag_action(lag));
  }
  key.push_back(window.current_discrete_state());
  key.push_back(action);
}

std::shared_ptr<HistoryOneHotFeatures> HistoryOneHotFeatures::fit(const Dataset& data, std::size_t k) {
  if (data.empty()) throw ValidationError("cannot index history patterns of an empty dataset");
  if (data.num_states == 0) throw ValidationError("history one-hot features need a finite state space");
  std::shared_ptr<HistoryOneHotFeatures> f(new HistoryOneHotFeatures(k));
  const std::size_t T = data.horizon();
  f->index_.resize(T + 1);
  std::vector<int> key;
  for (std::size_t t = 0; t <= T; ++t) {
    KeyIndex& idx = f->index_[t];
    for (const Trajectory& tr : data.trajectories) {
      if (tr.actions[t] == kNullAction) continue;
      make_key(HistoryWindow(tr, t, k), k, tr.actions[t], key);
      idx.emplace(key, idx.size());
    }
  }
  return f;
}

std::string HistoryOneHotFeatures::id() const { return "history_onehot:" + std::to_string(k_); }

void HistoryOneHotFeatures::eval(const HistoryWindow& window, int action, SparseVector& out) const {
  out.clear();
  if (action == kNullAction || window.t() >= index_.size()) return;
  thread_local std::vector<int> key;
  make_key(window, k_, action, key);
  const KeyIndex& idx = index_[window.t()];
  const auto it = idx.find(key);
  if (it != idx.end()) out.emplace_back(it->second, 1.0);
}

}  // namespace ope
