#include "ope/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "ope/common.hpp"
#include "ope/features.hpp"
#include "ope/reference.hpp"

namespace ope {

using nlohmann::json;

namespace {

/// Reads typed fields out of one JSON object and rejects keys nobody asked for.
class Section {
 public:
  Section(const json& doc, std::string path) : doc_(doc), path_(std::move(path)) {
    if (!doc_.is_object()) throw ValidationError(path_ + " must be an object");
  }

  template <typename T>
  void read(const std::string& key, T& out) {
    seen_.insert(key);
    if (!doc_.contains(key)) return;
    try {
      out = doc_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ValidationError(path_ + "." + key + ": " + e.what());
    }
  }

  const json* child(const std::string& key) {
    seen_.insert(key);
    return doc_.contains(key) ? &doc_.at(key) : nullptr;
  }

  void finish() const {
    for (const auto& [key, value] : doc_.items())
      if (!seen_.count(key)) throw ValidationError("unknown config key " + path_ + "." + key);
  }

 private:
  const json& doc_;
  std::string path_;
  std::set<std::string> seen_;
};

std::vector<std::string> read_ks(const json& value, const std::string& path) {
  if (!value.is_array()) throw ValidationError(path + " must be a list");
  std::vector<std::string> out;
  for (const json& v : value) {
    if (v.is_string()) out.push_back(v.get<std::string>());
    else if (v.is_number_unsigned()) out.push_back(std::to_string(v.get<std::size_t>()));
    else throw ValidationError(path + " entries must be \"oracle\" or non-negative integers");
  }
  return out;
}

Eigen::MatrixXd read_matrix(const json& value, const std::string& path) {
  try {
    const auto rows = value.get<std::vector<std::vector<double>>>();
    if (rows.empty() || rows.front().empty()) throw ValidationError(path + " must be a non-empty matrix");
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].size() != rows.front().size()) throw ValidationError(path + " has ragged rows");
      for (std::size_t j = 0; j < rows[i].size(); ++j)
        m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    }
    return m;
  } catch (const json::exception& e) {
    throw ValidationError(path + ": " + e.what());
  }
}

Eigen::VectorXd read_vector(const json& value, const std::string& path) {
  try {
    const auto v = value.get<std::vector<double>>();
    return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
  } catch (const json::exception& e) {
    throw ValidationError(path + ": " + e.what());
  }
}

json matrix_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(row);
  }
  return rows;
}

json vector_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

const json& require(const json& spec, const std::string& key, const std::string& path) {
  if (!spec.contains(key)) throw ValidationError(path + "." + key + " is required");
  return spec.at(key);
}

void check_keys(const json& spec, const std::set<std::string>& allowed, const std::string& path) {
  if (!spec.is_object()) throw ValidationError(path + " must be an object");
  for (const auto& [key, value] : spec.items())
    if (!allowed.count(key)) throw ValidationError("unknown config key " + path + "." + key);
}

}  // namespace

ExperimentConfig parse_config(const json& doc, ExperimentConfig c) {
  Section root(doc, "config");
  if (const json* env = root.child("environment")) {
    Section s(*env, "environment");
    std::string kind = to_string(c.environment.kind);
    s.read("kind", kind);
    c.environment.kind = parse_environment_kind(kind);
    s.read("preset", c.environment.preset);
    if (const json* spec = s.child("spec")) c.environment.spec = *spec;
    s.finish();
    if (c.environment.preset != "reference" && c.environment.preset != "toy" &&
        c.environment.preset != "custom")
      throw ValidationError("environment.preset must be reference, toy or custom");
  }
  if (const json* pol = root.child("policy")) {
    Section s(*pol, "policy");
    s.read("basis", c.policy.basis);
    s.read("degree", c.policy.degree);
    s.read("max_degree", c.policy.max_degree);
    if (const json* ks = s.child("k")) c.policy.ks = read_ks(*ks, "policy.k");
    s.read("mixing", c.policy.mixing);
    s.read("encoding", c.policy.encoding);
    s.read("gradient_tolerance", c.policy.fit.gradient_tolerance);
    s.read("max_iterations", c.policy.fit.max_iterations);
    s.finish();
    (void)parse_action_encoding(c.policy.encoding);
    if (c.policy.basis != "tabular" && c.policy.basis != "linear" && c.policy.basis != "polynomial")
      throw ValidationError("policy.basis must be tabular, linear or polynomial");
  }
  if (const json* est = root.child("estimator")) {
    Section s(*est, "estimator");
    s.read("kinds", c.estimator.kinds);
    s.read("q_mode", c.estimator.q_mode);
    s.read("q_offset", c.estimator.q_offset);
    s.read("ridge", c.estimator.ridge);
    s.read("gamma", c.estimator.gamma);
    s.finish();
    if (c.estimator.q_mode != "exact" && c.estimator.q_mode != "zero")
      throw ValidationError("estimator.q_mode must be exact or zero");
    if (!(c.estimator.ridge >= 0.0)) throw ValidationError("estimator.ridge must be non-negative");
    if (!(c.estimator.gamma > 0.0 && c.estimator.gamma <= 1.0))
      throw ValidationError("estimator.gamma must lie in (0, 1]");
  }
  if (const json* sw = root.child("sweep")) {
    Section s(*sw, "sweep");
    s.read("n", c.sweep.ns);
    s.read("replications", c.sweep.replications);
    s.read("seed", c.sweep.seed);
    s.read("workers", c.sweep.workers);
    s.finish();
  }
  if (const json* tr = root.child("truth")) {
    Section s(*tr, "truth");
    s.read("episodes", c.truth.episodes);
    s.finish();
  }
  if (const json* sel = root.child("select_history")) {
    Section s(*sel, "select_history");
    s.read("candidates", c.selection.candidates);
    s.read("method", c.selection.method);
    s.read("resamples", c.selection.resamples);
    s.read("estimator", c.selection.estimator);
    s.read("n", c.selection.n);
    s.read("dataset", c.selection.dataset);
    s.read("variances", c.selection.variances);
    s.finish();
    (void)parse_variance_method(c.selection.method);
    (void)parse_core_kind(c.selection.estimator);
  }
  if (const json* sim = root.child("simulate")) {
    Section s(*sim, "simulate");
    s.read("n", c.simulate.n);
    s.finish();
  }
  if (const json* out = root.child("output")) {
    Section s(*out, "output");
    s.read("directory", c.output.directory);
    s.read("formats", c.output.formats);
    s.finish();
    for (const auto& f : c.output.formats)
      if (f != "csv" && f != "json") throw ValidationError("output.formats entries must be csv or json");
  }
  root.finish();
  return c;
}

ExperimentConfig load_config(const std::string& path, ExperimentConfig base) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config file " + path);
  json doc;
  try {
    doc = json::parse(in, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw ValidationError("malformed config " + path + ": " + e.what());
  }
  return parse_config(doc, std::move(base));
}

json to_json(const ExperimentConfig& c) {
  json doc;
  doc["environment"] = {{"kind", to_string(c.environment.kind)}, {"preset", c.environment.preset}};
  if (!c.environment.spec.is_null()) doc["environment"]["spec"] = c.environment.spec;
  doc["policy"] = {{"basis", c.policy.basis},
                   {"degree", c.policy.degree},
                   {"max_degree", c.policy.max_degree},
                   {"k", c.policy.ks},
                   {"mixing", c.policy.mixing},
                   {"encoding", c.policy.encoding},
                   {"gradient_tolerance", c.policy.fit.gradient_tolerance},
                   {"max_iterations", c.policy.fit.max_iterations}};
  doc["estimator"] = {{"kinds", c.estimator.kinds},
                      {"q_mode", c.estimator.q_mode},
                      {"q_offset", c.estimator.q_offset},
                      {"ridge", c.estimator.ridge},
                      {"gamma", c.estimator.gamma}};
  doc["sweep"] = {{"n", c.sweep.ns},
                  {"replications", c.sweep.replications},
                  {"seed", c.sweep.seed},
                  {"workers", c.sweep.workers}};
  doc["truth"] = {{"episodes", c.truth.episodes}};
  doc["select_history"] = {{"candidates", c.selection.candidates},
                           {"method", c.selection.method},
                           {"resamples", c.selection.resamples},
                           {"estimator", c.selection.estimator},
                           {"n", c.selection.n},
                           {"dataset", c.selection.dataset},
                           {"variances", c.selection.variances}};
  doc["simulate"] = {{"n", c.simulate.n}};
  doc["output"] = {{"directory", c.output.directory}, {"formats", c.output.formats}};
  return doc;
}

// ---------------------------------------------------------------------------
// Environments

BanditSpec make_bandit_spec(const EnvironmentConfig& env) {
  if (env.kind != EnvironmentKind::bandit) throw ValidationError("environment is not a bandit");
  if (env.preset != "custom") {
    double sd = 1.0;
    if (env.spec.is_object()) {
      check_keys(env.spec, {"reward_noise_sd"}, "environment.spec");
      if (env.spec.contains("reward_noise_sd")) sd = env.spec.at("reward_noise_sd").get<double>();
    }
    return toy_bandit_spec(sd);
  }
  const std::string p = "environment.spec";
  check_keys(env.spec, {"context_probs", "reward_mean", "reward_noise_sd", "behavior_probs", "target_probs"}, p);
  BanditSpec s;
  s.context_probs = read_vector(require(env.spec, "context_probs", p), p + ".context_probs");
  s.reward_mean = read_matrix(require(env.spec, "reward_mean", p), p + ".reward_mean");
  if (env.spec.contains("reward_noise_sd")) s.reward_noise_sd = env.spec.at("reward_noise_sd").get<double>();
  s.behavior_probs = read_vector(require(env.spec, "behavior_probs", p), p + ".behavior_probs");
  s.target_probs = read_vector(require(env.spec, "target_probs", p), p + ".target_probs");
  s.validate();
  return s;
}

TabularMDPSpec make_tabular_spec(const EnvironmentConfig& env) {
  if (env.kind != EnvironmentKind::tabular) throw ValidationError("environment is not a tabular MDP");
  if (env.preset != "custom") {
    if (env.spec.is_object() && !env.spec.empty())
      throw ValidationError("environment.spec is only read when preset is custom");
    return reference_mdp_spec();
  }
  const std::string p = "environment.spec";
  check_keys(env.spec,
             {"num_states", "num_actions", "transition", "reward_mean", "reward_noise_sd", "initial_dist", "horizon",
              "discount", "behavior", "target"},
             p);
  TabularMDPSpec s;
  try {
    s.num_states = require(env.spec, "num_states", p).get<std::size_t>();
    s.num_actions = require(env.spec, "num_actions", p).get<std::size_t>();
    if (env.spec.contains("reward_noise_sd")) s.reward_noise_sd = env.spec.at("reward_noise_sd").get<double>();
    s.horizon = require(env.spec, "horizon", p).get<std::size_t>();
    if (env.spec.contains("discount")) s.discount = env.spec.at("discount").get<double>();
  } catch (const json::exception& e) {
    throw ValidationError(p + ": " + e.what());
  }
  const json& transition = require(env.spec, "transition", p);
  if (!transition.is_array()) throw ValidationError(p + ".transition must be a list of matrices, one per action");
  for (std::size_t a = 0; a < transition.size(); ++a)
    s.transition.push_back(read_matrix(transition[a], p + ".transition[" + std::to_string(a) + "]"));
  s.reward_mean = read_matrix(require(env.spec, "reward_mean", p), p + ".reward_mean");
  s.initial_dist = read_vector(require(env.spec, "initial_dist", p), p + ".initial_dist");
  s.validate();
  return s;
}

CartPoleSpec make_cartpole_spec(const EnvironmentConfig& env) {
  if (env.kind != EnvironmentKind::cartpole) throw ValidationError("environment is not CartPole");
  CartPoleSpec s;
  if (env.spec.is_null()) return s;
  const std::string p = "environment.spec";
  check_keys(env.spec,
             {"gravity", "cart_mass", "pole_mass", "pole_half_length", "force_magnitude", "dt", "x_max", "theta_max",
              "horizon", "init_range", "behavior_logit_scale", "target_logit_scale"},
             p);
  auto get = [&](const char* key, auto& field) {
    if (!env.spec.contains(key)) return;
    try {
      field = env.spec.at(key).get<std::decay_t<decltype(field)>>();
    } catch (const json::exception& e) {
      throw ValidationError(p + "." + key + ": " + e.what());
    }
  };
  get("gravity", s.gravity);
  get("cart_mass", s.cart_mass);
  get("pole_mass", s.pole_mass);
  get("pole_half_length", s.pole_half_length);
  get("force_magnitude", s.force_magnitude);
  get("dt", s.dt);
  get("x_max", s.x_max);
  get("theta_max", s.theta_max);
  get("horizon", s.horizon);
  get("init_range", s.init_range);
  get("behavior_logit_scale", s.behavior_logit_scale);
  get("target_logit_scale", s.target_logit_scale);
  s.validate();
  return s;
}

PolicyPair make_policies(const EnvironmentConfig& env) {
  switch (env.kind) {
    case EnvironmentKind::bandit:
      throw ValidationError("bandit policies are part of the bandit spec");
    case EnvironmentKind::cartpole: {
      const CartPoleSpec s = make_cartpole_spec(env);
      return {std::make_shared<ParametricHistoryPolicy>(cartpole_policy(s.target_logit_scale)),
              std::make_shared<ParametricHistoryPolicy>(cartpole_policy(s.behavior_logit_scale))};
    }
    case EnvironmentKind::tabular: {
      if (env.preset != "custom")
        return {std::make_shared<TabularPolicy>(reference_target_policy()),
                std::make_shared<TabularPolicy>(reference_behavior_policy())};
      const std::string p = "environment.spec";
      return {std::make_shared<TabularPolicy>(read_matrix(require(env.spec, "target", p), p + ".target")),
              std::make_shared<TabularPolicy>(read_matrix(require(env.spec, "behavior", p), p + ".behavior"))};
    }
  }
  throw ValidationError("unknown environment");
}

ParametricHistoryPolicy make_policy_class(const ExperimentConfig& config, std::size_t n) {
  const PolicyConfig& p = config.policy;
  const ActionEncoding encoding = parse_action_encoding(p.encoding);
  std::shared_ptr<const FeatureBasis> basis;
  std::size_t actions = 0;
  if (config.environment.kind == EnvironmentKind::tabular) {
    const TabularMDPSpec s = make_tabular_spec(config.environment);
    actions = s.num_actions;
    if (p.basis != "tabular") throw ValidationError("tabular environments use the tabular policy basis");
    basis = std::make_shared<TabularBasis>(s.num_states, s.num_actions);
  } else if (config.environment.kind == EnvironmentKind::cartpole) {
    actions = 2;
    if (p.basis == "linear") {
      basis = std::make_shared<LinearBasis>(4, 2);
    } else if (p.basis == "polynomial") {
      const std::size_t degree = p.degree == 0 ? sieve_degree(n, p.max_degree) : p.degree;
      basis = std::make_shared<PolynomialBasis>(4, degree, 2);
    } else {
      throw ValidationError("CartPole uses the linear or polynomial policy basis");
    }
  } else {
    throw ValidationError("bandit environments have no parametric policy class");
  }
  return ParametricHistoryPolicy(basis, 0, actions, encoding, p.mixing);
}

json to_json(const BanditSpec& s) {
  return {{"context_probs", vector_json(s.context_probs)},
          {"reward_mean", matrix_json(s.reward_mean)},
          {"reward_noise_sd", s.reward_noise_sd},
          {"behavior_probs", vector_json(s.behavior_probs)},
          {"target_probs", vector_json(s.target_probs)}};
}

json to_json(const TabularMDPSpec& s) {
  json transition = json::array();
  for (const auto& m : s.transition) transition.push_back(matrix_json(m));
  return {{"num_states", s.num_states},
          {"num_actions", s.num_actions},
          {"transition", transition},
          {"reward_mean", matrix_json(s.reward_mean)},
          {"reward_noise_sd", s.reward_noise_sd},
          {"initial_dist", vector_json(s.initial_dist)},
          {"horizon", s.horizon},
          {"discount", s.discount}};
}

json to_json(const CartPoleSpec& s) {
  return {{"gravity", s.gravity},
          {"cart_mass", s.cart_mass},
          {"pole_mass", s.pole_mass},
          {"pole_half_length", s.pole_half_length},
          {"force_magnitude", s.force_magnitude},
          {"dt", s.dt},
          {"x_max", s.x_max},
          {"theta_max", s.theta_max},
          {"horizon", s.horizon},
          {"init_range", s.init_range},
          {"behavior_logit_scale", s.behavior_logit_scale},
          {"target_logit_scale", s.target_logit_scale}};
}

}  // namespace ope
