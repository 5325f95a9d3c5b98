#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "ope/analysis.hpp"
#include "ope/environments.hpp"
#include "ope/policies.hpp"

namespace ope {

/// Which environment to build. A preset fills every field; "custom" reads
/// the spec from the config file.
struct EnvironmentConfig {
  EnvironmentKind kind = EnvironmentKind::tabular;
  std::string preset = "reference";  // reference | toy | custom
  nlohmann::json spec;               // custom spec fields (validated on use)
};

struct PolicyConfig {
  std::string basis = "tabular";  // tabular | linear | polynomial
  std::size_t degree = 2;         // polynomial basis degree (0: sieve schedule)
  std::size_t max_degree = 4;     // cap for the sieve schedule
  std::vector<std::string> ks = {"oracle", "0", "1", "2"};
  double mixing = kDefaultMixing;
  std::string encoding = "reference";
  FitOptions fit;
};

struct EstimatorConfig {
  std::vector<std::string> kinds = {"ois", "sis"};
  std::string q_mode = "exact";  // exact | zero
  double q_offset = 3.0;         // used by dr_offset
  double ridge = kDefaultRidge;
  double gamma = 1.0;
};

struct SweepConfig {
  std::vector<std::size_t> ns = {1000};
  std::size_t replications = 1000;
  std::uint64_t seed = 20240607;
  std::size_t workers = 0;
};

struct TruthConfig {
  std::size_t episodes = 100000;
};

struct SelectionConfig {
  std::vector<std::size_t> candidates = {0, 1, 2};
  std::string method = "bootstrap";
  std::size_t resamples = 200;
  std::string estimator = "sis";
  std::size_t n = 5000;
  std::string dataset;  // CSV path; empty: simulate n trajectories
  std::vector<double> variances;  // optional: skip estimation and select from these
};

struct SimulateConfig {
  std::size_t n = 1000;
};

struct OutputConfig {
  std::string directory = "ope-lab-out";
  std::vector<std::string> formats = {"csv", "json"};
};

struct ExperimentConfig {
  EnvironmentConfig environment;
  PolicyConfig policy;
  EstimatorConfig estimator;
  SweepConfig sweep;
  TruthConfig truth;
  SelectionConfig selection;
  SimulateConfig simulate;
  OutputConfig output;
};

/// Parses a config document on top of the defaults. Unknown keys and
/// ill-typed values raise ValidationError naming the offending path.
ExperimentConfig parse_config(const nlohmann::json& doc, ExperimentConfig base = {});
ExperimentConfig load_config(const std::string& path, ExperimentConfig base = {});

/// Full resolved config (every field, including defaults).
nlohmann::json to_json(const ExperimentConfig& config);

// Environment construction ----------------------------------------------------

BanditSpec make_bandit_spec(const EnvironmentConfig& env);
TabularMDPSpec make_tabular_spec(const EnvironmentConfig& env);
CartPoleSpec make_cartpole_spec(const EnvironmentConfig& env);

/// Target and behavior policies of a sequential environment.
struct PolicyPair {
  std::shared_ptr<const Policy> target;
  std::shared_ptr<const Policy> behavior;
};
PolicyPair make_policies(const EnvironmentConfig& env);

/// The parametric class behavior policies are fitted in (k = 0 template).
ParametricHistoryPolicy make_policy_class(const ExperimentConfig& config, std::size_t n = 0);

nlohmann::json to_json(const BanditSpec& spec);
nlohmann::json to_json(const TabularMDPSpec& spec);
nlohmann::json to_json(const CartPoleSpec& spec);

}  // namespace ope
