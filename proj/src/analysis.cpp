#include "ope/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "ope/common.hpp"
#include "ope/parallel.hpp"
#include "ope/random.hpp"

namespace ope {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

Eigen::Index idx(std::size_t i) { return static_cast<Eigen::Index>(i); }

}  // namespace

std::string to_string(CoreKind kind) {
  switch (kind) {
    case CoreKind::ois:
      return "ois";
    case CoreKind::sis:
      return "sis";
    case CoreKind::dr:
      return "dr";
  }
  return "ois";
}

CoreKind parse_core_kind(const std::string& name) {
  if (name == "ois") return CoreKind::ois;
  if (name == "sis") return CoreKind::sis;
  if (name == "dr") return CoreKind::dr;
  throw ValidationError("unknown estimator core '" + name + "' (expected ois, sis or dr)");
}

Eigen::VectorXd core_terms(CoreKind kind, const Dataset& data, const ISWeights& weights, const Policy& target,
                           const QFunction* q, double gamma) {
  switch (kind) {
    case CoreKind::ois:
      return ois_terms(data, weights, gamma);
    case CoreKind::sis:
      return sis_terms(data, weights, gamma);
    case CoreKind::dr:
      if (q == nullptr) throw ValidationError("the DR core needs a Q function");
      return dr_terms(data, weights, *q, target, gamma);
  }
  return {};
}

// ---------------------------------------------------------------------------
// Projection variance

ProjectionReport project_terms(const Eigen::VectorXd& terms, const Eigen::MatrixXd& scores) {
  if (terms.size() == 0) throw ValidationError("projection needs at least one trajectory");
  if (scores.rows() != terms.size()) throw ValidationError("terms and scores disagree on n");
  const double n = static_cast<double>(terms.size());
  ProjectionReport r;
  r.n = static_cast<std::size_t>(terms.size());
  const Eigen::VectorXd centered = terms.array() - terms.mean();
  r.var_raw = centered.squaredNorm() / n;
  r.cross_moment = scores.transpose() * centered / n;
  r.fisher = scores.transpose() * scores / n;
  r.fisher = 0.5 * (r.fisher + r.fisher.transpose());
  if (r.fisher.size() == 0) {
    r.var_projected = r.var_raw;
    return r;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(r.fisher);
  r.fisher_min_eigenvalue = eig.eigenvalues().minCoeff();
  const double threshold = 1e-10 * std::max(1.0, eig.eigenvalues().maxCoeff());
  if (r.fisher_min_eigenvalue < threshold) {
    r.ridge = 1e-8 * std::max(1.0, eig.eigenvalues().maxCoeff());
    r.fisher.diagonal().array() += r.ridge;
  }
  // Spectral solve of the (possibly ridged) system.
  const Eigen::VectorXd coords = eig.eigenvectors().transpose() * r.cross_moment;
  const Eigen::VectorXd values = eig.eigenvalues().array() + r.ridge;
  double explained = 0.0;
  for (Eigen::Index j = 0; j < coords.size(); ++j)
    if (values[j] > 0.0) explained += coords[j] * coords[j] / values[j];
  r.var_projected = std::max(0.0, r.var_raw - explained);
  return r;
}

ProjectionReport projection_variance(const Dataset& data, const Policy& target, const Policy& weight_behavior,
                                     const ParametricHistoryPolicy& score_policy, CoreKind core,
                                     const QFunction* q, double gamma) {
  const ISWeights weights = compute_weights(data, target, weight_behavior);
  ProjectionReport r = project_terms(core_terms(core, data, weights, target, q, gamma),
                                     score_matrix(score_policy, data));
  r.core = to_string(core);
  r.k = score_policy.history_length();
  return r;
}

// ---------------------------------------------------------------------------
// Sweep statistics

double PairedDifference::z() const {
  if (se > 0.0) return difference / se;
  if (difference == 0.0) return 0.0;
  return std::copysign(std::numeric_limits<double>::infinity(), difference);
}

namespace {

/// Jackknife standard error from leave-one-out statistics.
double jackknife_se(const Eigen::VectorXd& loo) {
  const double m = static_cast<double>(loo.size());
  if (m < 2) return kNaN;
  const double mean = loo.mean();
  return std::sqrt((m - 1.0) / m * (loo.array() - mean).square().sum());
}

struct Moments {
  Eigen::VectorXd x;  // successful estimates

  double mean() const { return x.mean(); }
  double variance() const { return (x.array() - x.mean()).square().mean(); }

  Eigen::VectorXd loo_mean() const {
    const double m = static_cast<double>(x.size());
    return (x.sum() - x.array()) / (m - 1.0);
  }
  Eigen::VectorXd loo_variance() const {
    const double m = static_cast<double>(x.size());
    const Eigen::ArrayXd mu = (x.sum() - x.array()) / (m - 1.0);
    const Eigen::ArrayXd m2 = (x.squaredNorm() - x.array().square()) / (m - 1.0);
    return (m2 - mu.square()).matrix();
  }
};

Moments centered_moments(const Eigen::VectorXd& x) {
  // Shifting by the mean keeps the second-moment formulas well conditioned.
  Moments m;
  m.x = x.array() - x.mean();
  return m;
}

Eigen::VectorXd successful(const Eigen::VectorXd& estimates) {
  std::vector<double> ok;
  for (double v : estimates)
    if (std::isfinite(v)) ok.push_back(v);
  return Eigen::Map<Eigen::VectorXd>(ok.data(), idx(ok.size()));
}

}  // namespace

SweepRow summarize_estimates(const Eigen::VectorXd& estimates, double truth, double truth_se,
                             double max_failure_fraction) {
  SweepRow row;
  const Eigen::VectorXd x = successful(estimates);
  row.replications = static_cast<std::size_t>(x.size());
  row.failures = static_cast<std::size_t>(estimates.size() - x.size());
  row.valid = static_cast<double>(row.failures) <= max_failure_fraction * static_cast<double>(estimates.size()) &&
              row.replications >= 2;
  if (x.size() == 0) {
    row.mean = row.bias = row.variance = row.mse = kNaN;
    row.bias_se = row.variance_se = row.mse_se = kNaN;
    return row;
  }
  row.mean = x.mean();
  row.bias = row.mean - truth;
  const Moments c = centered_moments(x);
  row.variance = c.variance();
  row.mse = row.bias * row.bias + row.variance;
  if (x.size() >= 2) {
    row.bias_se = std::sqrt(std::pow(jackknife_se(c.loo_mean()), 2) + truth_se * truth_se);
    row.variance_se = jackknife_se(c.loo_variance());
    const Eigen::ArrayXd loo_bias = c.loo_mean().array() + (row.mean - truth);
    const Eigen::VectorXd loo_mse = (loo_bias.square() + c.loo_variance().array()).matrix();
    row.mse_se = std::sqrt(std::pow(jackknife_se(loo_mse), 2) + std::pow(2.0 * row.bias * truth_se, 2));
  } else {
    row.bias_se = row.variance_se = row.mse_se = kNaN;
  }
  return row;
}

namespace {

std::size_t column_index(const std::vector<SweepColumn>& columns, const SweepColumn& c) {
  const auto it = std::find(columns.begin(), columns.end(), c);
  if (it == columns.end()) throw ValidationError("sweep has no column " + c.estimator + " k=" + c.k);
  return static_cast<std::size_t>(it - columns.begin());
}

enum class Statistic { variance, abs_bias, mse };

PairedDifference paired(const SweepReport& r, const SweepColumn& a, const SweepColumn& b, std::size_t n,
                        Statistic stat) {
  const auto nit = std::find(r.ns.begin(), r.ns.end(), n);
  if (nit == r.ns.end()) throw ValidationError("sweep has no n = " + std::to_string(n));
  const Eigen::MatrixXd& est = r.estimates[static_cast<std::size_t>(nit - r.ns.begin())];
  const Eigen::Index ia = idx(column_index(r.columns, a));
  const Eigen::Index ib = idx(column_index(r.columns, b));
  std::vector<double> xa, xb;
  for (Eigen::Index i = 0; i < est.rows(); ++i)
    if (std::isfinite(est(i, ia)) && std::isfinite(est(i, ib))) {
      xa.push_back(est(i, ia));
      xb.push_back(est(i, ib));
    }
  PairedDifference out;
  if (xa.size() < 2) {
    out.difference = out.se = kNaN;
    return out;
  }
  const Eigen::Map<Eigen::VectorXd> va(xa.data(), idx(xa.size())), vb(xb.data(), idx(xb.size()));
  const double shift_a = va.mean(), shift_b = vb.mean();
  const Moments ma = centered_moments(va), mb = centered_moments(vb);
  auto value = [&](const Eigen::ArrayXd& mean_a, const Eigen::ArrayXd& var_a, const Eigen::ArrayXd& mean_b,
                   const Eigen::ArrayXd& var_b) -> Eigen::ArrayXd {
    const Eigen::ArrayXd bias_a = mean_a + (shift_a - r.truth);
    const Eigen::ArrayXd bias_b = mean_b + (shift_b - r.truth);
    switch (stat) {
      case Statistic::variance:
        return var_a - var_b;
      case Statistic::abs_bias:
        return bias_a.abs() - bias_b.abs();
      case Statistic::mse:
        return bias_a.square() + var_a - bias_b.square() - var_b;
    }
    return var_a - var_b;
  };
  const Eigen::ArrayXd full = value(Eigen::ArrayXd::Constant(1, 0.0), Eigen::ArrayXd::Constant(1, ma.variance()),
                                    Eigen::ArrayXd::Constant(1, 0.0), Eigen::ArrayXd::Constant(1, mb.variance()));
  out.difference = full[0];
  out.se = jackknife_se(value(ma.loo_mean().array(), ma.loo_variance().array(), mb.loo_mean().array(),
                              mb.loo_variance().array())
                            .matrix());
  return out;
}

}  // namespace

const SweepRow& SweepReport::row(const std::string& estimator, const std::string& k, std::size_t n) const {
  for (const SweepRow& r : rows)
    if (r.column.estimator == estimator && r.column.k == k && r.n == n) return r;
  throw ValidationError("sweep has no row " + estimator + " k=" + k + " n=" + std::to_string(n));
}

PairedDifference SweepReport::variance_difference(const SweepColumn& a, const SweepColumn& b,
                                                  std::size_t n) const {
  return paired(*this, a, b, n, Statistic::variance);
}

PairedDifference SweepReport::abs_bias_difference(const SweepColumn& a, const SweepColumn& b,
                                                  std::size_t n) const {
  return paired(*this, a, b, n, Statistic::abs_bias);
}

PairedDifference SweepReport::mse_difference(const SweepColumn& a, const SweepColumn& b, std::size_t n) const {
  return paired(*this, a, b, n, Statistic::mse);
}

SweepReport run_sweep(const SweepProblem& problem, const SweepOptions& options) {
  if (options.replications < 2) throw ValidationError("a sweep needs at least 2 replications");
  if (options.ns.empty()) throw ValidationError("a sweep needs at least one sample size");
  SweepReport report;
  report.truth = problem.truth();
  report.truth_se = problem.truth_se();
  report.ns = options.ns;
  report.columns = problem.columns();
  if (report.columns.empty()) throw ValidationError("a sweep needs at least one estimator");
  const std::size_t cols = report.columns.size();

  for (std::size_t ni = 0; ni < options.ns.size(); ++ni) {
    const std::size_t n = options.ns[ni];
    if (n == 0) throw ValidationError("sample sizes must be positive");
    Eigen::MatrixXd est(idx(options.replications), idx(cols));
    parallel_for(options.replications, options.workers, [&](std::size_t rep) {
      std::vector<double> values;
      try {
        values = problem.evaluate(n, substream_seed(options.seed, n, rep));
      } catch (const EstimationError&) {
        values.assign(cols, kNaN);
      }
      if (values.size() != cols) throw std::logic_error("sweep problem returned the wrong number of estimates");
      for (std::size_t c = 0; c < cols; ++c) est(idx(rep), idx(c)) = values[c];
    });
    for (std::size_t c = 0; c < cols; ++c) {
      SweepRow row = summarize_estimates(est.col(idx(c)), report.truth, report.truth_se,
                                         options.max_failure_fraction);
      row.column = report.columns[c];
      row.n = n;
      report.rows.push_back(row);
    }
    report.estimates.push_back(std::move(est));
  }
  return report;
}

// ---------------------------------------------------------------------------
// Bandit problem

BanditSweepProblem::BanditSweepProblem(BanditSpec spec) : spec_(std::move(spec)) { spec_.validate(); }

std::vector<SweepColumn> BanditSweepProblem::columns() const {
  return {{"oracle", "oracle"}, {"context_agnostic", "0"}, {"context_dependent", "0"}};
}

double BanditSweepProblem::truth() const { return exact_value(spec_); }

std::vector<double> BanditSweepProblem::evaluate(std::size_t n, std::uint64_t seed) const {
  const Dataset data = sample_bandit_dataset(spec_, n, seed);
  std::vector<double> out;
  for (BanditMode mode : {BanditMode::oracle, BanditMode::context_agnostic, BanditMode::context_dependent}) {
    try {
      out.push_back(bandit_is(data, mode, spec_));
    } catch (const EstimationError&) {
      out.push_back(kNaN);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Sequential problem

SequentialSweepProblem::SequentialSweepProblem(TabularMDPSpec spec, SequentialSweepConfig config)
    : tabular_(std::move(spec)), config_(std::move(config)) {
  tabular_->validate();
  check_config();
  truth_ = exact_value(*tabular_, *config_.target, config_.gamma);
  oracle_marginal_ratios_ = exact_marginal_ratios(*tabular_, *config_.target, *config_.behavior);
}

SequentialSweepProblem::SequentialSweepProblem(CartPoleSpec spec, SequentialSweepConfig config, double truth,
                                               double truth_se)
    : cartpole_(std::move(spec)), config_(std::move(config)), truth_(truth), truth_se_(truth_se) {
  cartpole_->validate();
  check_config();
  for (const auto& e : config_.estimators)
    if (e == "mis") throw ValidationError("MIS sweeps need a tabular environment");
}

void SequentialSweepProblem::check_config() const {
  if (config_.estimators.empty()) throw ValidationError("estimator list is empty");
  if (config_.ks.empty()) throw ValidationError("k list is empty");
  if (!config_.target || !config_.behavior) throw ValidationError("sweep needs target and behavior policies");
  for (const auto& e : config_.estimators) {
    if (e != "ois" && e != "sis" && e != "dr" && e != "dr_offset" && e != "mis")
      throw ValidationError("unknown estimator '" + e + "'");
    if ((e == "dr" || e == "dr_offset") && !config_.q) throw ValidationError("DR estimators need a Q function");
  }
  for (const auto& k : config_.ks) {
    if (k == "oracle") continue;
    std::size_t pos = 0;
    try {
      (void)std::stoul(k, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != k.size() || k.empty() || k[0] == '-') throw ValidationError("invalid history length '" + k + "'");
  }
  const bool needs_class = std::any_of(config_.estimators.begin(), config_.estimators.end(),
                                       [](const std::string& e) { return e != "mis"; }) &&
                           std::any_of(config_.ks.begin(), config_.ks.end(),
                                       [](const std::string& k) { return k != "oracle"; });
  if (needs_class && !config_.policy_class) throw ValidationError("estimated ratios need a policy class");
}

std::vector<SweepColumn> SequentialSweepProblem::columns() const {
  std::vector<SweepColumn> out;
  for (const auto& e : config_.estimators)
    for (const auto& k : config_.ks) out.push_back({e, k});
  return out;
}

Dataset SequentialSweepProblem::sample(std::size_t n, std::uint64_t seed) const {
  if (tabular_) return sample_trajectories(*tabular_, *config_.behavior, n, seed);
  return sample_trajectories(*cartpole_, *config_.behavior, n, seed);
}

std::vector<double> SequentialSweepProblem::evaluate(std::size_t n, std::uint64_t seed) const {
  const Dataset data = sample(n, seed);
  const SequentialSweepConfig& c = config_;
  const std::size_t ne = c.estimators.size();
  std::vector<double> out(ne * c.ks.size(), kNaN);
  const std::optional<QFunction> q_offset =
      c.q ? std::optional<QFunction>(c.q->with_offset(c.q->offset() + c.q_offset)) : std::nullopt;

  for (std::size_t ki = 0; ki < c.ks.size(); ++ki) {
    const std::string& k = c.ks[ki];
    const bool oracle = k == "oracle";
    const std::size_t lags = oracle ? 0 : std::stoul(k);
    std::optional<ISWeights> weights;
    bool weights_failed = false;
    auto get_weights = [&]() -> const ISWeights* {
      if (weights || weights_failed) return weights ? &*weights : nullptr;
      try {
        if (oracle) {
          weights = compute_weights(data, *c.target, *c.behavior, "oracle");
        } else {
          FitResult fit = fit_mle(data, *c.policy_class, lags, c.fit);
          if (!fit.report.converged) {
            weights_failed = true;
            return nullptr;
          }
          weights = compute_weights(data, *c.target, fit.policy, "estimated(" + k + ")");
        }
      } catch (const EstimationError&) {
        weights_failed = true;
      }
      return weights ? &*weights : nullptr;
    };

    for (std::size_t ei = 0; ei < ne; ++ei) {
      const std::string& e = c.estimators[ei];
      double& slot = out[ei * c.ks.size() + ki];
      try {
        if (e == "mis") {
          if (oracle) {
            slot = mis_terms(data, tabulate_marginal_ratios(data, oracle_marginal_ratios_), c.gamma).mean();
          } else {
            const MISRatioModel model =
                fit_mis_ratios(data, *c.target, HistoryOneHotFeatures::fit(data, lags), c.ridge);
            slot = mis(data, model, c.gamma);
          }
          continue;
        }
        const ISWeights* w = get_weights();
        if (w == nullptr) continue;
        if (e == "ois") slot = ois(data, *w, c.gamma);
        else if (e == "sis") slot = sis(data, *w, c.gamma);
        else if (e == "dr") slot = dr(data, *w, *c.q, *c.target, c.gamma);
        else if (e == "dr_offset") slot = dr(data, *w, *q_offset, *c.target, c.gamma);
      } catch (const EstimationError&) {
        slot = kNaN;
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// History selection

std::string to_string(VarianceMethod method) {
  return method == VarianceMethod::bootstrap ? "bootstrap" : "sampling_formula";
}

VarianceMethod parse_variance_method(const std::string& name) {
  if (name == "bootstrap") return VarianceMethod::bootstrap;
  if (name == "sampling_formula" || name == "sampling-formula") return VarianceMethod::sampling_formula;
  throw ValidationError("unknown variance method '" + name + "'");
}

HistorySelection select_history(const std::vector<std::size_t>& candidates, const std::vector<double>& variances,
                                std::size_t n) {
  if (candidates.empty()) throw ValidationError("history selection needs at least one candidate");
  if (candidates.size() != variances.size()) throw ValidationError("one variance per candidate is required");
  if (n == 0) throw ValidationError("history selection needs n >= 1");
  HistorySelection s;
  s.n = n;
  s.candidates = candidates;
  s.variances = variances;
  const double log_n = std::log(static_cast<double>(n));
  std::size_t best = 0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (!std::isfinite(variances[i])) throw EstimationError("variance estimate is not finite");
    s.objectives.push_back(2.0 * static_cast<double>(n) * variances[i] -
                           static_cast<double>(candidates[i]) * log_n);
    const bool better = s.objectives[i] < s.objectives[best] ||
                        (s.objectives[i] == s.objectives[best] && candidates[i] < candidates[best]);
    if (better) best = i;
  }
  s.h_star = candidates[best];
  return s;
}

namespace {

double estimate_with_fit(const Dataset& data, const Policy& target, const ParametricHistoryPolicy& policy_class,
                         const QFunction* q, std::size_t h, const SelectHistoryOptions& o) {
  const FitResult fit = fit_mle(data, policy_class, h, o.fit);
  const ISWeights w = compute_weights(data, target, fit.policy, "estimated(" + std::to_string(h) + ")");
  return core_terms(o.estimator, data, w, target, q, o.gamma).mean();
}

}  // namespace

HistorySelection select_history(const Dataset& data, const Policy& target,
                                const ParametricHistoryPolicy& policy_class, const QFunction* q,
                                const std::vector<std::size_t>& candidates, const SelectHistoryOptions& options) {
  if (candidates.empty()) throw ValidationError("history selection needs at least one candidate");
  if (data.empty()) throw ValidationError("history selection needs data");
  if (options.estimator == CoreKind::dr && q == nullptr) throw ValidationError("the DR core needs a Q function");
  const std::size_t n = data.size();
  std::vector<double> variances(candidates.size());

  if (options.method == VarianceMethod::bootstrap) {
    if (n < 10) throw ValidationError("bootstrap variance needs n >= 10");
    const std::size_t B = options.bootstrap_resamples;
    if (B < 2) throw ValidationError("bootstrap needs at least 2 resamples");
    Eigen::MatrixXd est(idx(B), idx(candidates.size()));
    parallel_for(B, options.workers, [&](std::size_t b) {
      Rng rng = make_rng(substream_seed(options.seed, b));
      std::uniform_int_distribution<std::size_t> pick(0, n - 1);
      std::vector<std::size_t> indices(n);
      for (auto& i : indices) i = pick(rng);
      const Dataset resample = data.subset(indices);
      for (std::size_t c = 0; c < candidates.size(); ++c)
        est(idx(b), idx(c)) = estimate_with_fit(resample, target, policy_class, q, candidates[c], options);
    });
    for (std::size_t c = 0; c < candidates.size(); ++c) {
      const Eigen::VectorXd col = est.col(idx(c));
      variances[c] = (col.array() - col.mean()).square().sum() / static_cast<double>(B - 1);
    }
  } else {
    for (std::size_t c = 0; c < candidates.size(); ++c) {
      const FitResult fit = fit_mle(data, policy_class, candidates[c], options.fit);
      const ISWeights w = compute_weights(data, target, fit.policy);
      const ProjectionReport r = project_terms(core_terms(options.estimator, data, w, target, q, options.gamma),
                                               score_matrix(fit.policy, data));
      variances[c] = r.var_projected / static_cast<double>(n);
    }
  }
  HistorySelection s = select_history(candidates, variances, n);
  s.method = to_string(options.method);
  return s;
}

// ---------------------------------------------------------------------------
// Coverage

CoverageReport coverage_diagnostics(const Dataset& data, const Policy& target, const Policy& behavior,
                                    const QFunction* q, double gamma) {
  CoverageReport r;
  std::vector<double> pe(data.num_actions), pb(data.num_actions);
  double u_max = 0.0;
  for (const Trajectory& tr : data.trajectories) {
    for (std::size_t t = 0; t < tr.length(); ++t) {
      r.r_max = std::max(r.r_max, std::abs(tr.rewards[t]));
      const int a = tr.actions[t];
      if (a == kNullAction) continue;
      target.probabilities(HistoryWindow(tr, t, target.history_length()), pe);
      behavior.probabilities(HistoryWindow(tr, t, behavior.history_length()), pb);
      const double b = pb[static_cast<std::size_t>(a)];
      r.eps_hat = std::min(r.eps_hat, b);
      r.c_hat = std::max(r.c_hat, b > 0.0 ? pe[static_cast<std::size_t>(a)] / b
                                          : std::numeric_limits<double>::infinity());
      if (q != nullptr) {
        double next = 0.0;
        if (t + 1 < tr.length() && tr.actions[t + 1] != kNullAction) {
          target.probabilities(HistoryWindow(tr, t + 1, target.history_length()), pe);
          for (std::size_t c = 0; c < pe.size(); ++c)
            if (pe[c] != 0.0) next += pe[c] * (*q)(tr, t + 1, static_cast<int>(c));
        }
        u_max = std::max(u_max, std::abs(tr.rewards[t] - (*q)(tr, t, a) + gamma * next));
      }
    }
  }
  if (q != nullptr) r.u_max = u_max;
  return r;
}

}  // namespace ope
