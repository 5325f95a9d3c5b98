#include "ope/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "ope/common.hpp"

namespace ope {

namespace {

void require_same_size(const Dataset& data, std::size_t rows, const char* what) {
  if (rows != data.size()) {
    std::ostringstream os;
    os << what << " cover " << rows << " trajectories but the dataset has " << data.size();
    throw ValidationError(os.str());
  }
}

Eigen::Index idx(std::size_t i) { return static_cast<Eigen::Index>(i); }

}  // namespace

// ---------------------------------------------------------------------------
// Importance weights

ISWeights compute_weights(const Dataset& data, const Policy& target, const Policy& behavior,
                          std::string source) {
  if (target.num_actions() != data.num_actions || behavior.num_actions() != data.num_actions)
    throw ValidationError("policy and dataset disagree on the number of actions");
  const std::size_t n = data.size();
  const std::size_t steps = data.horizon() + 1;
  ISWeights w;
  w.source = std::move(source);
  w.lambda.resize(idx(n), idx(steps));
  std::vector<double> pe(data.num_actions), pb(data.num_actions);
  for (std::size_t i = 0; i < n; ++i) {
    const Trajectory& tr = data[i];
    double lambda = 1.0;
    for (std::size_t t = 0; t < steps; ++t) {
      const int a = tr.actions[t];
      if (a != kNullAction) {
        target.probabilities(HistoryWindow(tr, t, target.history_length()), pe);
        behavior.probabilities(HistoryWindow(tr, t, behavior.history_length()), pb);
        const double b = pb[static_cast<std::size_t>(a)];
        if (!(b > 0.0)) {
          std::ostringstream os;
          os << "behavior probability 0 for observed action " << a << " (trajectory " << i << ", t = " << t
             << ")";
          throw EstimationError(os.str());
        }
        const double ratio = pe[static_cast<std::size_t>(a)] / b;
        w.coverage = std::max(w.coverage, ratio);
        w.min_behavior_probability = std::min(w.min_behavior_probability, b);
        lambda *= ratio;
      }
      w.lambda(idx(i), idx(t)) = lambda;
    }
  }
  return w;
}

// ---------------------------------------------------------------------------
// Q functions

QFunction QFunction::zero() { return QFunction(); }

QFunction QFunction::tabular(std::vector<Eigen::MatrixXd> tables) {
  if (tables.empty()) throw ValidationError("tabular Q function needs at least one table");
  QFunction q;
  q.mode_ = Mode::tabular;
  q.tables_ = std::move(tables);
  return q;
}

QFunction QFunction::linear(std::shared_ptr<const StateActionFeatures> features,
                            std::vector<Eigen::VectorXd> coefficients) {
  if (!features) throw ValidationError("linear Q function needs features");
  QFunction q;
  q.mode_ = Mode::linear;
  q.features_ = std::move(features);
  q.coefficients_ = std::move(coefficients);
  return q;
}

QFunction QFunction::with_offset(double offset) const {
  QFunction q = *this;
  q.offset_ = offset;
  return q;
}

std::size_t QFunction::history_length() const {
  return mode_ == Mode::linear ? features_->history_length() : 0;
}

double QFunction::operator()(const Trajectory& trajectory, std::size_t t, int action) const {
  switch (mode_) {
    case Mode::zero:
      return offset_;
    case Mode::tabular:
      if (t >= tables_.size()) throw ValidationError("Q table missing for this time step");
      return tables_[t](trajectory.discrete_state(t), action) + offset_;
    case Mode::linear: {
      thread_local SparseVector phi;
      features_->eval(HistoryWindow(trajectory, t, features_->history_length()), action, phi);
      const Eigen::VectorXd& beta = coefficients_.at(t);
      double value = offset_;
      for (const auto& [j, v] : phi) value += v * beta[idx(j)];
      return value;
    }
  }
  return offset_;
}

QFunction exact_q_function(const TabularMDPSpec& spec, const Policy& target, double gamma) {
  spec.validate();
  const auto S = idx(spec.num_states);
  const auto A = idx(spec.num_actions);
  Eigen::MatrixXd pi(S, A);
  for (Eigen::Index s = 0; s < S; ++s) {
    const auto p = markov_probabilities(target, static_cast<int>(s));
    for (Eigen::Index a = 0; a < A; ++a) pi(s, a) = p[static_cast<std::size_t>(a)];
  }
  std::vector<Eigen::MatrixXd> tables(spec.horizon + 1);
  tables[spec.horizon] = spec.reward_mean;
  for (std::size_t t = spec.horizon; t-- > 0;) {
    const Eigen::VectorXd v_next = (tables[t + 1].array() * pi.array()).rowwise().sum();
    Eigen::MatrixXd q = spec.reward_mean;
    for (Eigen::Index a = 0; a < A; ++a) q.col(a) += gamma * spec.transition[static_cast<std::size_t>(a)] * v_next;
    tables[t] = std::move(q);
  }
  return QFunction::tabular(std::move(tables));
}

// ---------------------------------------------------------------------------
// Trajectory-level estimators

Eigen::VectorXd ois_terms(const Dataset& data, const ISWeights& weights, double gamma) {
  require_same_size(data, weights.size(), "weights");
  Eigen::VectorXd out(idx(data.size()));
  const auto T = idx(data.horizon());
  for (std::size_t i = 0; i < data.size(); ++i)
    out[idx(i)] = weights.lambda(idx(i), T) * data[i].discounted_return(gamma);
  return out;
}

Eigen::VectorXd sis_terms(const Dataset& data, const ISWeights& weights, double gamma) {
  require_same_size(data, weights.size(), "weights");
  Eigen::VectorXd out(idx(data.size()));
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Trajectory& tr = data[i];
    double sum = 0.0, discount = 1.0;
    for (std::size_t t = 0; t < tr.length(); ++t, discount *= gamma)
      sum += discount * weights.lambda(idx(i), idx(t)) * tr.rewards[t];
    out[idx(i)] = sum;
  }
  return out;
}

Eigen::VectorXd dr_terms(const Dataset& data, const ISWeights& weights, const QFunction& q,
                         const Policy& target, double gamma) {
  require_same_size(data, weights.size(), "weights");
  Eigen::VectorXd out(idx(data.size()));
  std::vector<double> pe(data.num_actions);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Trajectory& tr = data[i];
    double sum = 0.0, discount = 1.0;
    for (std::size_t t = 0; t < tr.length(); ++t, discount *= gamma) {
      const int a = tr.actions[t];
      // The absorbing tail of a terminated episode has no decision and no value.
      if (a == kNullAction) continue;
      target.probabilities(HistoryWindow(tr, t, target.history_length()), pe);
      double baseline = 0.0;
      for (std::size_t b = 0; b < pe.size(); ++b)
        if (pe[b] != 0.0) baseline += pe[b] * q(tr, t, static_cast<int>(b));
      sum += discount * (weights.lambda(idx(i), idx(t)) * (tr.rewards[t] - q(tr, t, a)) +
                         weights.previous(i, t) * baseline);
    }
    out[idx(i)] = sum;
  }
  return out;
}

double ois(const Dataset& data, const ISWeights& weights, double gamma) {
  return ois_terms(data, weights, gamma).mean();
}

double sis(const Dataset& data, const ISWeights& weights, double gamma) {
  return sis_terms(data, weights, gamma).mean();
}

double dr(const Dataset& data, const ISWeights& weights, const QFunction& q, const Policy& target,
          double gamma) {
  return dr_terms(data, weights, q, target, gamma).mean();
}

// ---------------------------------------------------------------------------
// Bandit

std::string to_string(BanditMode mode) {
  switch (mode) {
    case BanditMode::oracle:
      return "oracle";
    case BanditMode::context_agnostic:
      return "context_agnostic";
    case BanditMode::context_dependent:
      return "context_dependent";
  }
  return "oracle";
}

BanditMode parse_bandit_mode(const std::string& name) {
  if (name == "oracle") return BanditMode::oracle;
  if (name == "context_agnostic" || name == "ca") return BanditMode::context_agnostic;
  if (name == "context_dependent" || name == "cd") return BanditMode::context_dependent;
  throw ValidationError("unknown bandit estimator '" + name + "'");
}

double bandit_is(const Dataset& data, BanditMode mode, const BanditSpec& spec) {
  if (data.empty()) throw ValidationError("bandit estimator needs data");
  if (data.horizon() != 0) throw ValidationError("bandit estimator expects horizon-0 trajectories");
  const auto S = idx(spec.num_contexts());
  const auto A = idx(spec.num_actions());
  Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(S, A);
  for (const Trajectory& tr : data.trajectories) {
    const int s = tr.discrete_state(0);
    const int a = tr.actions[0];
    if (s < 0 || s >= S || a < 0 || a >= A) throw ValidationError("bandit sample outside the spec");
    counts(s, a) += 1.0;
  }
  const double n = static_cast<double>(data.size());
  const Eigen::VectorXd action_counts = counts.colwise().sum().transpose();
  const Eigen::VectorXd context_counts = counts.rowwise().sum();

  // Same per-record terms and averaging as ois(), so T = 0 agrees bit for bit.
  Eigen::VectorXd terms(idx(data.size()));
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Trajectory& tr = data[i];
    const int s = tr.discrete_state(0);
    const int a = tr.actions[0];
    double b = 0.0;
    switch (mode) {
      case BanditMode::oracle:
        b = spec.behavior_probs[a];
        break;
      case BanditMode::context_agnostic:
        b = action_counts[a] / n;
        break;
      case BanditMode::context_dependent:
        b = counts(s, a) / context_counts[s];
        break;
    }
    if (!(b > 0.0)) {
      std::ostringstream os;
      os << "behavior probability undefined or zero at context " << s << ", action " << a;
      throw EstimationError(os.str());
    }
    terms[idx(i)] = spec.target_probs[a] / b * tr.rewards[0];
  }
  return terms.mean();
}

// ---------------------------------------------------------------------------
// Linear marginal ratios

namespace {

/// Factorization of Sigma = E_n[phi phi^T] + ridge I built from sparse rows.
/// One-hot style features (at most one entry per row) give a diagonal Sigma
/// and are solved elementwise.
class GramSystem {
 public:
  GramSystem(const std::vector<SparseVector>& rows, std::size_t dim, double ridge, std::size_t t) {
    const double inv_n = 1.0 / static_cast<double>(rows.size());
    diagonal_ = std::all_of(rows.begin(), rows.end(), [](const SparseVector& r) { return r.size() <= 1; });
    if (diagonal_) {
      diag_ = Eigen::VectorXd::Zero(idx(dim));
      for (const SparseVector& r : rows)
        for (const auto& [j, v] : r) diag_[idx(j)] += v * v * inv_n;
      diag_.array() += ridge;
      for (Eigen::Index j = 0; j < diag_.size(); ++j)
        if (!(diag_[j] > 0.0)) singular(t, ridge);
      return;
    }
    Eigen::MatrixXd sigma = Eigen::MatrixXd::Zero(idx(dim), idx(dim));
    for (const SparseVector& r : rows)
      for (const auto& [j, v] : r)
        for (const auto& [l, u] : r) sigma(idx(j), idx(l)) += v * u * inv_n;
    sigma.diagonal().array() += ridge;
    ldlt_.compute(sigma);
    const double scale = std::max(1.0, sigma.diagonal().cwiseAbs().maxCoeff());
    if (ldlt_.info() != Eigen::Success || ldlt_.vectorD().minCoeff() <= 1e-13 * scale) singular(t, ridge);
  }

  Eigen::VectorXd solve(const Eigen::VectorXd& rhs) const {
    if (diagonal_) return rhs.cwiseQuotient(diag_);
    return ldlt_.solve(rhs);
  }

 private:
  [[noreturn]] static void singular(std::size_t t, double ridge) {
    std::ostringstream os;
    os << "feature second-moment matrix is singular at t = " << t << " (ridge " << ridge << ")";
    if (ridge == 0.0) os << "; use a positive ridge";
    throw EstimationError(os.str());
  }

  bool diagonal_ = false;
  Eigen::VectorXd diag_;
  Eigen::LDLT<Eigen::MatrixXd> ldlt_;
};

double dot(const SparseVector& phi, const Eigen::VectorXd& beta) {
  double s = 0.0;
  for (const auto& [j, v] : phi) s += v * beta[idx(j)];
  return s;
}

void axpy(double scale, const SparseVector& phi, Eigen::VectorXd& out) {
  for (const auto& [j, v] : phi) out[idx(j)] += scale * v;
}

/// phi_t(H_t, A_t) and sum_a pi_e(a) phi_t(H_t, a) for every trajectory at one t.
struct StepFeatures {
  std::vector<SparseVector> observed;
  std::vector<SparseVector> target_mean;
};

StepFeatures step_features(const Dataset& data, const Policy& target, const StateActionFeatures& features,
                           std::size_t t) {
  StepFeatures out;
  out.observed.resize(data.size());
  out.target_mean.resize(data.size());
  std::vector<double> pe(data.num_actions);
  SparseVector phi;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Trajectory& tr = data[i];
    const HistoryWindow window(tr, t, features.history_length());
    features.eval(window, tr.actions[t], out.observed[i]);
    if (tr.actions[t] == kNullAction) continue;
    target.probabilities(HistoryWindow(tr, t, target.history_length()), pe);
    SparseVector& mean = out.target_mean[i];
    for (std::size_t a = 0; a < pe.size(); ++a) {
      if (pe[a] == 0.0) continue;
      features.eval(window, static_cast<int>(a), phi);
      for (const auto& [j, v] : phi) mean.emplace_back(j, pe[a] * v);
    }
  }
  return out;
}

struct RatioFit {
  MISRatioModel model;
  std::vector<StepFeatures> steps;
  std::vector<GramSystem> systems;
};

RatioFit fit_ratios(const Dataset& data, const Policy& target,
                    std::shared_ptr<const StateActionFeatures> features, double ridge) {
  if (data.empty()) throw ValidationError("cannot fit marginal ratios on an empty dataset");
  if (!features) throw ValidationError("marginal ratio model needs features");
  if (!(ridge >= 0.0)) throw ValidationError("ridge must be non-negative");
  const std::size_t n = data.size();
  const std::size_t steps = data.horizon() + 1;
  const double inv_n = 1.0 / static_cast<double>(n);

  RatioFit fit;
  MISRatioModel& m = fit.model;
  m.features = features;
  m.ridge = ridge;
  m.k = features->history_length();
  m.weights.resize(idx(n), idx(steps));
  for (std::size_t t = 0; t < steps; ++t) {
    fit.steps.push_back(step_features(data, target, *features, t));
    const StepFeatures& sf = fit.steps.back();
    const std::size_t dim = features->dim(t);
    fit.systems.emplace_back(sf.observed, dim, ridge, t);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(idx(dim));
    for (std::size_t i = 0; i < n; ++i) {
      const double prev = t == 0 ? 1.0 : m.weights(idx(i), idx(t - 1));
      if (prev != 0.0) axpy(prev * inv_n, sf.target_mean[i], rhs);
    }
    m.alphas.push_back(fit.systems.back().solve(rhs));
    for (std::size_t i = 0; i < n; ++i) m.weights(idx(i), idx(t)) = dot(sf.observed[i], m.alphas.back());
    m.max_mean_deviation = std::max(m.max_mean_deviation, std::abs(m.weights.col(idx(t)).mean() - 1.0));
  }
  return fit;
}

}  // namespace

MISRatioModel fit_mis_ratios(const Dataset& data, const Policy& target,
                             std::shared_ptr<const StateActionFeatures> features, double ridge) {
  return fit_ratios(data, target, std::move(features), ridge).model;
}

Eigen::MatrixXd mis_weights(const Dataset& data, const MISRatioModel& model) {
  const std::size_t steps = data.horizon() + 1;
  if (model.alphas.size() != steps) throw ValidationError("ratio model horizon does not match the dataset");
  Eigen::MatrixXd w(idx(data.size()), idx(steps));
  SparseVector phi;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Trajectory& tr = data[i];
    for (std::size_t t = 0; t < steps; ++t) {
      model.features->eval(HistoryWindow(tr, t, model.features->history_length()), tr.actions[t], phi);
      w(idx(i), idx(t)) = dot(phi, model.alphas[t]);
    }
  }
  return w;
}

Eigen::VectorXd mis_terms(const Dataset& data, const Eigen::MatrixXd& weights, double gamma) {
  require_same_size(data, static_cast<std::size_t>(weights.rows()), "ratios");
  Eigen::VectorXd out(idx(data.size()));
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Trajectory& tr = data[i];
    double sum = 0.0, discount = 1.0;
    for (std::size_t t = 0; t < tr.length(); ++t, discount *= gamma)
      sum += discount * weights(idx(i), idx(t)) * tr.rewards[t];
    out[idx(i)] = sum;
  }
  return out;
}

double mis(const Dataset& data, const MISRatioModel& model, double gamma) {
  const Eigen::MatrixXd& w =
      static_cast<std::size_t>(model.weights.rows()) == data.size() ? model.weights : mis_weights(data, model);
  return mis_terms(data, w, gamma).mean();
}

DRLResult fit_drl_linear(const Dataset& data, const Policy& target,
                         std::shared_ptr<const StateActionFeatures> features, double ridge, double gamma) {
  RatioFit fit = fit_ratios(data, target, features, ridge);
  const std::size_t n = data.size();
  const std::size_t steps = data.horizon() + 1;
  const double inv_n = 1.0 / static_cast<double>(n);

  std::vector<Eigen::VectorXd> betas(steps);
  Eigen::VectorXd q_next = Eigen::VectorXd::Zero(idx(n));  // Q_{t+1}(S_{t+1}, pi_e)
  for (std::size_t t = steps; t-- > 0;) {
    const StepFeatures& sf = fit.steps[t];
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(idx(features->dim(t)));
    for (std::size_t i = 0; i < n; ++i)
      axpy((data[i].rewards[t] + gamma * q_next[idx(i)]) * inv_n, sf.observed[i], rhs);
    betas[t] = fit.systems[t].solve(rhs);
    for (std::size_t i = 0; i < n; ++i) q_next[idx(i)] = dot(sf.target_mean[i], betas[t]);
  }

  const Eigen::MatrixXd& w = fit.model.weights;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double sum = 0.0, discount = 1.0;
    for (std::size_t t = 0; t < steps; ++t, discount *= gamma) {
      const StepFeatures& sf = fit.steps[t];
      const double prev = t == 0 ? 1.0 : w(idx(i), idx(t - 1));
      sum += discount * (w(idx(i), idx(t)) * (data[i].rewards[t] - dot(sf.observed[i], betas[t])) +
                         prev * dot(sf.target_mean[i], betas[t]));
    }
    total += sum;
  }
  DRLResult out;
  out.estimate = total * inv_n;
  out.q = QFunction::linear(std::move(features), std::move(betas));
  out.ratios = std::move(fit.model);
  return out;
}

double drl_linear(const Dataset& data, const Policy& target,
                  std::shared_ptr<const StateActionFeatures> features, double ridge, double gamma) {
  return fit_drl_linear(data, target, std::move(features), ridge, gamma).estimate;
}

std::vector<Eigen::MatrixXd> exact_marginal_ratios(const TabularMDPSpec& spec, const Policy& target,
                                                   const Policy& behavior) {
  const auto de = state_action_marginals(spec, target);
  const auto db = state_action_marginals(spec, behavior);
  std::vector<Eigen::MatrixXd> out(de.size());
  for (std::size_t t = 0; t < de.size(); ++t)
    out[t] = (db[t].array() > 0.0).select(de[t].array() / db[t].array(), 0.0);
  return out;
}

Eigen::MatrixXd tabulate_marginal_ratios(const Dataset& data, const std::vector<Eigen::MatrixXd>& ratios) {
  const std::size_t steps = data.horizon() + 1;
  if (ratios.size() != steps) throw ValidationError("marginal ratio tables do not match the horizon");
  Eigen::MatrixXd w(idx(data.size()), idx(steps));
  for (std::size_t i = 0; i < data.size(); ++i)
    for (std::size_t t = 0; t < steps; ++t) {
      const int a = data[i].actions[t];
      w(idx(i), idx(t)) = a == kNullAction ? 0.0 : ratios[t](data[i].discrete_state(t), a);
    }
  return w;
}

EstimateDiagnostics diagnose(const std::string& kind, const std::string& k, const ISWeights& weights,
                             double ridge) {
  EstimateDiagnostics d;
  d.kind = kind;
  d.k = k;
  d.n = weights.size();
  d.coverage = weights.coverage;
  d.ridge = ridge;
  if (weights.size() > 0) {
    const Eigen::VectorXd last = weights.lambda.col(weights.lambda.cols() - 1);
    const double s = last.sum();
    d.weight_concentration = s > 0.0 ? last.squaredNorm() / (s * s) : 0.0;
    d.effective_sample_size = d.weight_concentration > 0.0 ? 1.0 / d.weight_concentration : 0.0;
  }
  return d;
}

}  // namespace ope
