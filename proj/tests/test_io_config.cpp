#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>

#include "ope/config.hpp"
#include "ope/environments.hpp"
#include "ope/io.hpp"
#include "ope/reference.hpp"

using namespace ope;
using nlohmann::json;

namespace {

std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("ope_lab_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST(Io, MetadataPath) {
  EXPECT_EQ(metadata_path("out/data.csv"), "out/data.meta.json");
  EXPECT_EQ(metadata_path("data"), "data.meta.json");
}

TEST(Io, FormatDoubleRoundTrips) {
  for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 25.205332, 1e17, std::numeric_limits<double>::denorm_min()})
    EXPECT_EQ(std::strtod(format_double(v).c_str(), nullptr), v);
  EXPECT_EQ(format_double(0.5), "0.5");
}

TEST(Io, TabularDatasetRoundTrip) {
  const auto dir = scratch_dir("tabular");
  const Dataset d = sample_trajectories(reference_mdp_spec(), reference_behavior_policy(), 40, 3);
  const std::string path = (dir / "data.csv").string();
  write_dataset(d, path, to_json(reference_mdp_spec()));
  EXPECT_TRUE(std::filesystem::exists(metadata_path(path)));
  EXPECT_EQ(read_dataset(path), d);
}

TEST(Io, CartPoleDatasetRoundTripKeepsNullActions) {
  const auto dir = scratch_dir("cartpole");
  const CartPoleSpec spec;
  const Dataset d = sample_trajectories(spec, cartpole_policy(0.0), 10, 4);
  const std::string path = (dir / "cp.csv").string();
  write_dataset(d, path);
  const Dataset back = read_dataset(path);
  EXPECT_EQ(back, d);
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "traj_id,t,state_0,state_1,state_2,state_3,action,reward");
}

TEST(Io, MalformedDatasetIsRejected) {
  const auto dir = scratch_dir("bad");
  const Dataset d = sample_trajectories(reference_mdp_spec(), reference_behavior_policy(), 3, 5);
  const std::string path = (dir / "d.csv").string();
  write_dataset(d, path);
  std::ofstream(path, std::ios::app) << "0,1,zero,1,2.0\n";
  EXPECT_THROW(read_dataset(path), ValidationError);
  EXPECT_THROW(read_dataset((dir / "missing.csv").string()), ValidationError);
}

TEST(Io, PolicyJsonRoundTrip) {
  ParametricHistoryPolicy p = tabular_policy_class(4, 2, 2, 0.01);
  Eigen::VectorXd theta = Eigen::VectorXd::LinSpaced(static_cast<Eigen::Index>(p.dimension()), -1.3, 2.1);
  p.set_theta(theta);
  const ParametricHistoryPolicy q = policy_from_json(to_json(p));
  EXPECT_EQ(q.theta(), p.theta());
  EXPECT_EQ(q.history_length(), 2u);
  EXPECT_EQ(q.mixing(), 0.01);
  EXPECT_EQ(q.basis().id(), p.basis().id());
  const Trajectory tr = sample_trajectory(reference_mdp_spec(), reference_behavior_policy(), 6);
  for (std::size_t t = 0; t < tr.length(); ++t) EXPECT_EQ(q.probabilities_at(tr, t), p.probabilities_at(tr, t));
}

TEST(Io, SweepCsvHeader) {
  const auto dir = scratch_dir("sweep");
  const BanditSweepProblem p(toy_bandit_spec());
  SweepOptions o;
  o.ns = {20};
  o.replications = 5;
  const SweepReport r = run_sweep(p, o);
  const std::string path = (dir / "sweep.csv").string();
  write_sweep_csv(r, path);
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "estimator,k,n,replications,bias,bias_se,variance,variance_se,mse,mse_se,failures");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 3);
}

TEST(Config, DefaultsRoundTripThroughJson) {
  const ExperimentConfig c;
  const json doc = to_json(c);
  EXPECT_EQ(to_json(parse_config(doc)), doc);
}

TEST(Config, OverridesApplyOnTopOfBase) {
  const json doc = json::parse(R"({"sweep": {"replications": 7, "n": [10, 20]}, "policy": {"k": ["oracle", 3]}})");
  const ExperimentConfig c = parse_config(doc);
  EXPECT_EQ(c.sweep.replications, 7u);
  EXPECT_EQ(c.sweep.ns, (std::vector<std::size_t>{10, 20}));
  EXPECT_EQ(c.policy.ks, (std::vector<std::string>{"oracle", "3"}));
  EXPECT_EQ(c.sweep.seed, ExperimentConfig{}.sweep.seed);
}

TEST(Config, UnknownKeysAreRejected) {
  EXPECT_THROW(parse_config(json::parse(R"({"sweeps": {}})")), ValidationError);
  EXPECT_THROW(parse_config(json::parse(R"({"sweep": {"replication": 3}})")), ValidationError);
  EXPECT_THROW(parse_config(json::parse(R"({"sweep": {"replications": "many"}})")), ValidationError);
  EXPECT_THROW(parse_config(json::parse(R"({"estimator": {"q_mode": "learned"}})")), ValidationError);
}

TEST(Config, LoadsFileWithComments) {
  const auto dir = scratch_dir("config");
  const std::string path = (dir / "c.json").string();
  std::ofstream(path) << "{\n  // fewer replications\n  \"sweep\": {\"replications\": 3}\n}\n";
  EXPECT_EQ(load_config(path).sweep.replications, 3u);
  std::ofstream(path) << "{ not json";
  EXPECT_THROW(load_config(path), ValidationError);
}

TEST(Config, PresetsBuildReferenceEnvironments) {
  EnvironmentConfig env;
  env.kind = EnvironmentKind::bandit;
  env.preset = "toy";
  EXPECT_NEAR(exact_value(make_bandit_spec(env)), 4.2, 1e-12);
  env.kind = EnvironmentKind::tabular;
  env.preset = "reference";
  const TabularMDPSpec s = make_tabular_spec(env);
  const PolicyPair pp = make_policies(env);
  EXPECT_NEAR(exact_value(s, *pp.target, 1.0), 25.205332, 1e-6);
}

TEST(Config, CustomTabularSpecRoundTrip) {
  EnvironmentConfig env;
  env.kind = EnvironmentKind::tabular;
  env.preset = "custom";
  env.spec = to_json(reference_mdp_spec());
  env.spec["behavior"] = json::array({{0.5, 0.5}, {0.6, 0.4}, {0.4, 0.6}, {0.5, 0.5}});
  env.spec["target"] = json::array({{0.35, 0.65}, {0.7, 0.3}, {0.55, 0.45}, {0.4, 0.6}});
  const TabularMDPSpec s = make_tabular_spec(env);
  const TabularMDPSpec ref = reference_mdp_spec();
  EXPECT_EQ(s.horizon, ref.horizon);
  for (std::size_t a = 0; a < 2; ++a) EXPECT_EQ(s.transition[a], ref.transition[a]);
  EXPECT_EQ(s.reward_mean, ref.reward_mean);
  const PolicyPair pp = make_policies(env);
  EXPECT_NEAR(exact_value(s, *pp.target, 1.0), exact_value(ref, reference_target_policy(), 1.0), 1e-12);

  env.spec["transition"][0][0][0] = 0.9;  // row no longer sums to one
  EXPECT_THROW(make_tabular_spec(env), ValidationError);
}

TEST(Config, PolicyClassFollowsSieveSchedule) {
  ExperimentConfig c;
  c.environment.kind = EnvironmentKind::cartpole;
  c.environment.preset = "reference";
  c.policy.basis = "polynomial";
  c.policy.degree = 0;
  c.policy.max_degree = 3;
  EXPECT_EQ(sieve_degree(16, 3), 2u);
  EXPECT_EQ(sieve_degree(10000, 3), 3u);
  const ParametricHistoryPolicy p = make_policy_class(c, 16);
  EXPECT_EQ(p.basis().id(), make_basis(p.basis().id())->id());
  EXPECT_NE(p.basis().id().find('2'), std::string::npos);
}
