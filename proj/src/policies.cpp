#include "ope/policies.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <sstream>
#include <unordered_map>

#include "ope/common.hpp"

namespace ope {

// ---------------------------------------------------------------------------
// Policy base

double Policy::probability(const HistoryWindow& window, int action) const {
  std::vector<double> probs(num_actions());
  probabilities(window, probs);
  return probs.at(static_cast<std::size_t>(action));
}

std::vector<double> Policy::probabilities_at(const Trajectory& trajectory, std::size_t t) const {
  std::vector<double> probs(num_actions());
  probabilities(HistoryWindow(trajectory, t, history_length()), probs);
  return probs;
}

void check_probability_vector(std::span<const double> probs, const char* what) {
  double sum = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0) || !std::isfinite(p))
      throw ValidationError(std::string(what) + " contains a negative or non-finite probability");
    sum += p;
  }
  if (std::abs(sum - 1.0) > kProbabilityTolerance) {
    std::ostringstream os;
    os.precision(17);
    os << what << " sums to " << sum << ", expected 1";
    throw ValidationError(os.str());
  }
}

// ---------------------------------------------------------------------------
// TabularPolicy

TabularPolicy::TabularPolicy(Eigen::MatrixXd table)
    : table_(std::move(table)), context_dependent_(table_.rows() != 1) {
  if (table_.rows() == 0 || table_.cols() == 0) throw ValidationError("empty policy table");
  for (Eigen::Index s = 0; s < table_.rows(); ++s) {
    const Eigen::VectorXd row = table_.row(s).transpose();
    for (double p : row)
      if (!(p >= 0.0)) throw ValidationError("policy table has a negative entry");
    if (std::abs(row.sum() - 1.0) > kProbabilityTolerance) {
      std::ostringstream os;
      os.precision(17);
      os << "policy table row " << s << " sums to " << row.sum();
      throw ValidationError(os.str());
    }
  }
}

TabularPolicy TabularPolicy::context_agnostic(const Eigen::VectorXd& probs) {
  return TabularPolicy(Eigen::MatrixXd(probs.transpose()));
}

void TabularPolicy::probabilities(const HistoryWindow& window, std::span<double> out) const {
  const Eigen::Index row = context_dependent_ ? window.current_discrete_state() : 0;
  if (row < 0 || row >= table_.rows()) throw ValidationError("state outside the policy table");
  for (Eigen::Index a = 0; a < table_.cols(); ++a) out[static_cast<std::size_t>(a)] = table_(row, a);
}

// ---------------------------------------------------------------------------
// ParametricHistoryPolicy

std::string to_string(ActionEncoding encoding) {
  return encoding == ActionEncoding::reference ? "reference" : "full";
}

ActionEncoding parse_action_encoding(const std::string& name) {
  if (name == "reference") return ActionEncoding::reference;
  if (name == "full") return ActionEncoding::full;
  throw ValidationError("unknown action encoding '" + name + "'");
}

ParametricHistoryPolicy::ParametricHistoryPolicy(std::shared_ptr<const FeatureBasis> basis, std::size_t k,
                                                 std::size_t num_actions, ActionEncoding encoding,
                                                 double mixing)
    : basis_(std::move(basis)), k_(k), num_actions_(num_actions), encoding_(encoding), mixing_(mixing) {
  if (!basis_) throw ValidationError("parametric policy needs a feature basis");
  if (num_actions_ == 0) throw ValidationError("parametric policy needs at least one action");
  if (!(mixing_ >= 0.0 && mixing_ < 1.0)) throw ValidationError("mixing weight must lie in [0, 1)");
  offsets_.assign(k_ + 2, 0);
  context_offsets_.assign(k_ + 2, 0);
  for (std::size_t lag = 0; lag <= k_; ++lag) {
    context_offsets_[lag + 1] = context_offsets_[lag] + basis_->dim(lag);
    offsets_[lag + 1] = offsets_[lag] + encoded_actions() * basis_->dim(lag);
  }
  context_dim_ = context_offsets_.back();
  theta_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(offsets_.back()));
}

std::size_t ParametricHistoryPolicy::encoded_actions() const {
  return encoding_ == ActionEncoding::reference ? num_actions_ - 1 : num_actions_;
}

void ParametricHistoryPolicy::set_theta(Eigen::VectorXd theta) {
  if (theta.size() != theta_.size()) {
    std::ostringstream os;
    os << "parameter vector has " << theta.size() << " entries, expected " << theta_.size();
    throw ValidationError(os.str());
  }
  theta_ = std::move(theta);
}

ParametricHistoryPolicy ParametricHistoryPolicy::with_theta(Eigen::VectorXd theta) const {
  ParametricHistoryPolicy copy = *this;
  copy.set_theta(std::move(theta));
  return copy;
}

void ParametricHistoryPolicy::context_features(const HistoryWindow& window, Eigen::VectorXd& out) const {
  out.resize(static_cast<Eigen::Index>(context_dim_));
  for (std::size_t lag = 0; lag <= k_; ++lag) {
    const std::size_t d = context_offsets_[lag + 1] - context_offsets_[lag];
    std::span<double> block(out.data() + context_offsets_[lag], d);
    if (lag > 0 && window.padded(lag)) {
      std::fill(block.begin(), block.end(), 0.0);
      continue;
    }
    basis_->eval(lag, window.lag_state(lag), lag == 0 ? kNullAction : window.lag_action(lag), block);
  }
}

void ParametricHistoryPolicy::expand(const Eigen::VectorXd& context, Eigen::MatrixXd& out) const {
  out.setZero(static_cast<Eigen::Index>(num_actions_), theta_.size());
  const std::size_t shift = encoding_ == ActionEncoding::reference ? 1 : 0;
  for (std::size_t a = shift; a < num_actions_; ++a) {
    const std::size_t e = a - shift;
    for (std::size_t lag = 0; lag <= k_; ++lag) {
      const std::size_t d = context_offsets_[lag + 1] - context_offsets_[lag];
      out.row(static_cast<Eigen::Index>(a))
          .segment(static_cast<Eigen::Index>(offsets_[lag] + e * d), static_cast<Eigen::Index>(d)) =
          context.segment(static_cast<Eigen::Index>(context_offsets_[lag]), static_cast<Eigen::Index>(d))
              .transpose();
    }
  }
}

void ParametricHistoryPolicy::action_features(const HistoryWindow& window, Eigen::MatrixXd& out) const {
  Eigen::VectorXd context;
  context_features(window, context);
  expand(context, out);
}

void ParametricHistoryPolicy::softmax_from_context(const Eigen::VectorXd& context, Eigen::VectorXd& raw) const {
  raw.setZero(static_cast<Eigen::Index>(num_actions_));
  const std::size_t shift = encoding_ == ActionEncoding::reference ? 1 : 0;
  for (std::size_t a = shift; a < num_actions_; ++a) {
    const std::size_t e = a - shift;
    double z = 0.0;
    for (std::size_t lag = 0; lag <= k_; ++lag) {
      const std::size_t d = context_offsets_[lag + 1] - context_offsets_[lag];
      z += theta_.segment(static_cast<Eigen::Index>(offsets_[lag] + e * d), static_cast<Eigen::Index>(d))
               .dot(context.segment(static_cast<Eigen::Index>(context_offsets_[lag]), static_cast<Eigen::Index>(d)));
    }
    raw[static_cast<Eigen::Index>(a)] = z;
  }
  const double zmax = raw.maxCoeff();
  raw = (raw.array() - zmax).exp();
  raw /= raw.sum();
}

void ParametricHistoryPolicy::probabilities(const HistoryWindow& window, std::span<double> out) const {
  Eigen::VectorXd context, raw;
  context_features(window, context);
  softmax_from_context(context, raw);
  const double u = mixing_ / static_cast<double>(num_actions_);
  for (std::size_t a = 0; a < num_actions_; ++a) out[a] = (1.0 - mixing_) * raw[static_cast<Eigen::Index>(a)] + u;
}

double ParametricHistoryPolicy::log_probability(const HistoryWindow& window, int action) const {
  std::vector<double> probs(num_actions_);
  probabilities(window, probs);
  return std::log(probs.at(static_cast<std::size_t>(action)));
}

namespace {

// Derivatives of log q_a, q = (1 - delta) softmax(X theta) + delta / m, for
// one design block X (m x p). With r_a = (1 - delta) p_a / q_a and
// d_a = x_a - sum_b p_b x_b:
//   grad log q_a = r_a d_a
//   hess log q_a = r_a (1 - r_a) d_a d_a^T - r_a sum_b p_b d_b d_b^T
struct BlockDerivatives {
  Eigen::VectorXd p, q, r;
  Eigen::MatrixXd d;  // m x p, rows d_a
};

void block_derivatives(const Eigen::MatrixXd& X, const Eigen::VectorXd& theta, double mixing,
                       BlockDerivatives& out) {
  const Eigen::Index m = X.rows();
  out.p = X * theta;
  const double zmax = out.p.maxCoeff();
  out.p = (out.p.array() - zmax).exp();
  out.p /= out.p.sum();
  out.q = (1.0 - mixing) * out.p.array() + mixing / static_cast<double>(m);
  out.r = (1.0 - mixing) * out.p.array() / out.q.array();
  const Eigen::RowVectorXd xbar = out.p.transpose() * X;
  out.d = X.rowwise() - xbar;
}

struct DesignGroup {
  Eigen::VectorXd context;
  Eigen::VectorXd counts;  // per action
};

struct VectorHash {
  std::size_t operator()(const std::vector<double>& v) const noexcept {
    std::size_t h = 1469598103934665603ULL;
    for (double x : v) {
      h ^= std::bit_cast<std::uint64_t>(x == 0.0 ? 0.0 : x);
      h *= 1099511628211ULL;
    }
    return h;
  }
};

std::vector<DesignGroup> build_design(const Dataset& data, const ParametricHistoryPolicy& policy) {
  std::unordered_map<std::vector<double>, std::size_t, VectorHash> index;
  std::vector<DesignGroup> groups;
  Eigen::VectorXd context;
  std::vector<double> key;
  const auto m = static_cast<Eigen::Index>(policy.num_actions());
  for (const Trajectory& tr : data.trajectories) {
    for (std::size_t t = 0; t < tr.length(); ++t) {
      const int a = tr.actions[t];
      if (a == kNullAction) continue;
      policy.context_features(HistoryWindow(tr, t, policy.history_length()), context);
      key.assign(context.data(), context.data() + context.size());
      auto [it, inserted] = index.try_emplace(key, groups.size());
      if (inserted) groups.push_back({context, Eigen::VectorXd::Zero(m)});
      groups[it->second].counts[a] += 1.0;
    }
  }
  return groups;
}

class LikelihoodModel {
 public:
  LikelihoodModel(const ParametricHistoryPolicy& policy, std::vector<DesignGroup> groups, double n)
      : policy_(policy), groups_(std::move(groups)), n_(n) {}

  double value(const Eigen::VectorXd& theta) const {
    double ll = 0.0;
    Eigen::MatrixXd X;
    BlockDerivatives bd;
    for (const DesignGroup& g : groups_) {
      expand(g, X);
      block_derivatives(X, theta, policy_.mixing(), bd);
      for (Eigen::Index a = 0; a < g.counts.size(); ++a)
        if (g.counts[a] > 0) ll += g.counts[a] * std::log(bd.q[a]);
    }
    return ll / n_;
  }

  void derivatives(const Eigen::VectorXd& theta, Eigen::VectorXd& grad, Eigen::MatrixXd& hess) const {
    const Eigen::Index dim = theta.size();
    grad.setZero(dim);
    hess.setZero(dim, dim);
    Eigen::MatrixXd X;
    BlockDerivatives bd;
    for (const DesignGroup& g : groups_) {
      expand(g, X);
      block_derivatives(X, theta, policy_.mixing(), bd);
      double total = 0.0;
      for (Eigen::Index a = 0; a < g.counts.size(); ++a) {
        const double n_a = g.counts[a];
        if (n_a == 0.0) continue;
        grad.noalias() += n_a * bd.r[a] * bd.d.row(a).transpose();
        const double c = n_a * bd.r[a] * (1.0 - bd.r[a]);
        if (c != 0.0) hess.noalias() += c * bd.d.row(a).transpose() * bd.d.row(a);
        total += n_a * bd.r[a];
      }
      // covariance term: sum_b p_b d_b d_b^T
      hess.noalias() -= total * (bd.d.transpose() * bd.p.asDiagonal() * bd.d);
    }
    grad /= n_;
    hess /= n_;
  }

  std::size_t size() const { return groups_.size(); }

 private:
  void expand(const DesignGroup& g, Eigen::MatrixXd& X) const {
    // Reuse the policy's own layout through a throwaway window-free path.
    X.setZero(static_cast<Eigen::Index>(policy_.num_actions()), static_cast<Eigen::Index>(policy_.dimension()));
    const std::size_t shift = policy_.encoding() == ActionEncoding::reference ? 1 : 0;
    std::size_t coff = 0;
    for (std::size_t lag = 0; lag <= policy_.history_length(); ++lag) {
      const std::size_t d = policy_.basis().dim(lag);
      for (std::size_t a = shift; a < policy_.num_actions(); ++a) {
        X.row(static_cast<Eigen::Index>(a))
            .segment(static_cast<Eigen::Index>(policy_.block_offset(lag) + (a - shift) * d),
                     static_cast<Eigen::Index>(d)) =
            g.context.segment(static_cast<Eigen::Index>(coff), static_cast<Eigen::Index>(d)).transpose();
      }
      coff += d;
    }
  }

  const ParametricHistoryPolicy& policy_;
  std::vector<DesignGroup> groups_;
  double n_;
};

Eigen::VectorXd initial_parameters(const ParametricHistoryPolicy& policy_class, const ParametricHistoryPolicy& target) {
  const Eigen::VectorXd& src = policy_class.theta();
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(target.dimension()));
  const Eigen::Index common = std::min<Eigen::Index>(src.size(), theta.size());
  theta.head(common) = src.head(common);
  return theta;
}

}  // namespace

void ParametricHistoryPolicy::add_score(const HistoryWindow& window, int action,
                                        Eigen::Ref<Eigen::VectorXd> score) const {
  Eigen::MatrixXd X;
  action_features(window, X);
  BlockDerivatives bd;
  block_derivatives(X, theta_, mixing_, bd);
  score.noalias() += bd.r[action] * bd.d.row(action).transpose();
}

ParametricHistoryPolicy ParametricHistoryPolicy::embedded(std::size_t k) const {
  if (k < k_) throw ValidationError("cannot embed a policy into a shorter history class");
  ParametricHistoryPolicy out(basis_, k, num_actions_, encoding_, mixing_);
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(out.dimension()));
  theta.head(theta_.size()) = theta_;
  out.set_theta(std::move(theta));
  return out;
}

FitResult fit_mle(const Dataset& data, const ParametricHistoryPolicy& policy_class, std::size_t k,
                  const FitOptions& options) {
  if (data.empty()) throw ValidationError("cannot fit a policy on an empty dataset");
  if (data.num_actions != policy_class.num_actions())
    throw ValidationError("policy class and dataset disagree on the number of actions");
  ParametricHistoryPolicy policy(policy_class.basis_ptr(), k, policy_class.num_actions(),
                                 policy_class.encoding(), policy_class.mixing());
  Eigen::VectorXd theta = initial_parameters(policy_class, policy);
  policy.set_theta(theta);

  LikelihoodModel model(policy, build_design(data, policy), static_cast<double>(data.size()));
  FitReport report;
  report.distinct_rows = model.size();

  Eigen::VectorXd grad;
  Eigen::MatrixXd hess;
  double ll = model.value(theta);
  double gradient_step = 1.0;
  for (std::size_t iter = 0;; ++iter) {
    model.derivatives(theta, grad, hess);
    report.iterations = iter;
    report.gradient_norm_at_solution = grad.norm();
    if (report.gradient_norm_at_solution <= options.gradient_tolerance) {
      report.converged = true;
      break;
    }
    if (iter >= options.max_iterations) break;

    bool accepted = false;
    Eigen::LLT<Eigen::MatrixXd> llt(-hess);
    if (llt.info() == Eigen::Success) {
      const Eigen::VectorXd step = llt.solve(grad);
      double scale = 1.0;
      for (int halving = 0; halving < 40; ++halving, scale *= 0.5) {
        const Eigen::VectorXd candidate = theta + scale * step;
        const double value = model.value(candidate);
        if (std::isfinite(value) && value >= ll) {
          theta = candidate;
          ll = value;
          accepted = true;
          break;
        }
      }
    }
    if (!accepted) {
      // Armijo backtracking along the gradient.
      ++report.gradient_steps;
      const double g2 = grad.squaredNorm();
      double scale = std::min(gradient_step * 2.0, 1e6);
      for (int halving = 0; halving < 60; ++halving, scale *= 0.5) {
        const Eigen::VectorXd candidate = theta + scale * grad;
        const double value = model.value(candidate);
        if (std::isfinite(value) && value >= ll + 1e-4 * scale * g2) {
          theta = candidate;
          ll = value;
          accepted = true;
          gradient_step = scale;
          break;
        }
      }
    }
    if (!accepted) break;  // no ascent direction found at machine precision
  }
  report.theta_hat = theta;
  report.log_likelihood = ll;
  policy.set_theta(theta);
  return {std::move(policy), std::move(report)};
}

double log_likelihood(const ParametricHistoryPolicy& policy, const Dataset& data) {
  if (data.empty()) throw ValidationError("empty dataset");
  double ll = 0.0;
  std::vector<double> probs(policy.num_actions());
  for (const Trajectory& tr : data.trajectories) {
    for (std::size_t t = 0; t < tr.length(); ++t) {
      if (tr.actions[t] == kNullAction) continue;
      policy.probabilities(HistoryWindow(tr, t, policy.history_length()), probs);
      ll += std::log(probs[static_cast<std::size_t>(tr.actions[t])]);
    }
  }
  return ll / static_cast<double>(data.size());
}

TabularPolicy fit_tabular(const Dataset& data, bool context_dependent) {
  if (data.empty()) throw ValidationError("cannot fit a policy on an empty dataset");
  if (data.num_states == 0) throw ValidationError("tabular policy estimation needs a finite state space");
  const auto S = static_cast<Eigen::Index>(context_dependent ? data.num_states : 1);
  const auto A = static_cast<Eigen::Index>(data.num_actions);
  Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(S, A);
  for (const Trajectory& tr : data.trajectories)
    for (std::size_t t = 0; t < tr.length(); ++t)
      if (tr.actions[t] != kNullAction)
        counts(context_dependent ? tr.discrete_state(t) : 0, tr.actions[t]) += 1.0;
  std::vector<Eigen::Index> unvisited;
  for (Eigen::Index s = 0; s < S; ++s) {
    const double total = counts.row(s).sum();
    if (total == 0.0) {
      unvisited.push_back(s);
      continue;
    }
    counts.row(s) /= total;
  }
  if (!unvisited.empty()) {
    std::ostringstream os;
    os << "behavior policy undefined at unvisited state(s):";
    for (auto s : unvisited) os << ' ' << s;
    throw EstimationError(os.str());
  }
  return TabularPolicy(std::move(counts));
}

Eigen::VectorXd score_vector(const ParametricHistoryPolicy& policy, const Trajectory& trajectory) {
  Eigen::VectorXd score = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(policy.dimension()));
  for (std::size_t t = 0; t < trajectory.length(); ++t) {
    if (trajectory.actions[t] == kNullAction) continue;
    policy.add_score(HistoryWindow(trajectory, t, policy.history_length()), trajectory.actions[t], score);
  }
  return score;
}

Eigen::MatrixXd score_matrix(const ParametricHistoryPolicy& policy, const Dataset& data) {
  Eigen::MatrixXd scores(static_cast<Eigen::Index>(data.size()), static_cast<Eigen::Index>(policy.dimension()));
  for (std::size_t i = 0; i < data.size(); ++i)
    scores.row(static_cast<Eigen::Index>(i)) = score_vector(policy, data[i]).transpose();
  return scores;
}

FisherReport fisher_information(const ParametricHistoryPolicy& policy, const Dataset& data,
                                double ridge_threshold, double ridge) {
  if (data.empty()) throw ValidationError("cannot estimate Fisher information from an empty dataset");
  const Eigen::MatrixXd scores = score_matrix(policy, data);
  FisherReport report;
  report.information = (scores.transpose() * scores) / static_cast<double>(data.size());
  report.information = 0.5 * (report.information + report.information.transpose());
  if (report.information.size() == 0) return report;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(report.information, Eigen::EigenvaluesOnly);
  report.min_eigenvalue = eig.eigenvalues().minCoeff();
  if (report.min_eigenvalue < ridge_threshold) {
    report.ridge = ridge;
    report.information.diagonal().array() += ridge;
  }
  return report;
}

}  // namespace ope
