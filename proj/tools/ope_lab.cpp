// ope-lab: command-line driver for the off-policy evaluation experiments.
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "ope/analysis.hpp"
#include "ope/common.hpp"
#include "ope/config.hpp"
#include "ope/io.hpp"
#include "ope/random.hpp"
#include "ope/reference.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ope;

namespace {

struct GlobalFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::size_t> workers;
  std::optional<std::size_t> replications;
};

/// Command defaults, then the config file, then flags.
ExperimentConfig resolve(ExperimentConfig base, const GlobalFlags& flags) {
  ExperimentConfig c = flags.config_path.empty() ? std::move(base) : load_config(flags.config_path, std::move(base));
  if (flags.seed) c.sweep.seed = *flags.seed;
  if (flags.out) c.output.directory = *flags.out;
  if (flags.replications) c.sweep.replications = *flags.replications;
  if (flags.workers) {
    c.sweep.workers = *flags.workers;
  } else if (const char* env = std::getenv("OPE_LAB_WORKERS")) {
    try {
      c.sweep.workers = std::stoul(env);
    } catch (const std::exception&) {
      throw ValidationError(std::string("OPE_LAB_WORKERS is not a worker count: ") + env);
    }
  }
  return c;
}

fs::path prepare_output(const ExperimentConfig& c) {
  const fs::path dir(c.output.directory);
  fs::create_directories(dir);
  write_json(to_json(c), (dir / "resolved_config.json").string());
  return dir;
}

bool wants(const ExperimentConfig& c, const std::string& format) {
  return std::find(c.output.formats.begin(), c.output.formats.end(), format) != c.output.formats.end();
}

std::string fmt(double v, int precision = 6) {
  std::ostringstream os;
  os.precision(precision);
  os << v;
  return os.str();
}

// bandit-demo -------------------------------------------------------------

ExperimentConfig bandit_defaults() {
  ExperimentConfig c;
  c.environment.kind = EnvironmentKind::bandit;
  c.environment.preset = "toy";
  c.sweep.ns = {50, 100, 200, 500, 1000, 2000};
  c.sweep.replications = 10000;
  c.output.directory = "bandit-demo";
  return c;
}

int cmd_bandit_demo(const ExperimentConfig& c) {
  if (c.sweep.replications < 2) throw ValidationError("replications must be at least 2 (variance is undefined)");
  const BanditSpec spec = make_bandit_spec(c.environment);
  const fs::path dir = prepare_output(c);
  const BanditSweepProblem problem(spec);
  SweepOptions o;
  o.ns = c.sweep.ns;
  o.replications = c.sweep.replications;
  o.seed = c.sweep.seed;
  o.workers = c.sweep.workers;
  const SweepReport report = run_sweep(problem, o);

  std::ofstream out(dir / "bandit_demo.csv");
  out << "n,estimator,log_abs_bias,log_mse\n";
  for (const SweepRow& r : report.rows)
    out << r.n << ',' << r.column.estimator << ',' << format_double(std::log(std::abs(r.bias))) << ','
        << format_double(std::log(r.mse)) << '\n';
  if (wants(c, "csv")) write_sweep_csv(report, (dir / "sweep.csv").string());
  if (wants(c, "json")) {
    json rows = json::array();
    for (const SweepRow& r : report.rows) rows.push_back(to_json(r));
    write_json({{"truth", report.truth}, {"rows", rows}}, (dir / "sweep.json").string());
  }

  std::cout << "truth " << report.truth << "\n";
  for (const SweepRow& r : report.rows)
    std::cout << "n=" << r.n << "  " << r.column.estimator << "  bias " << fmt(r.bias) << "  mse " << fmt(r.mse)
              << "\n";
  return 0;
}

// sweep -------------------------------------------------------------------

ExperimentConfig sweep_defaults() {
  ExperimentConfig c;
  c.estimator.kinds = {"ois", "sis", "dr", "dr_offset", "mis"};
  c.output.directory = "sweep";
  return c;
}

SequentialSweepConfig sequential_config(const ExperimentConfig& c, const PolicyPair& policies, std::size_t n) {
  SequentialSweepConfig s;
  s.estimators = c.estimator.kinds;
  s.ks = c.policy.ks;
  s.target = policies.target;
  s.behavior = policies.behavior;
  s.policy_class = std::make_shared<ParametricHistoryPolicy>(make_policy_class(c, n));
  s.q_offset = c.estimator.q_offset;
  s.ridge = c.estimator.ridge;
  s.gamma = c.estimator.gamma;
  s.fit = c.policy.fit;
  return s;
}

int cmd_sweep(const ExperimentConfig& c) {
  if (c.estimator.kinds.empty()) throw ValidationError("estimator.kinds is empty");
  if (c.sweep.replications < 2) throw ValidationError("replications must be at least 2");
  if (c.environment.kind == EnvironmentKind::bandit)
    throw ValidationError("use bandit-demo for the bandit environment");
  const PolicyPair policies = make_policies(c.environment);
  const std::size_t n_max = *std::max_element(c.sweep.ns.begin(), c.sweep.ns.end());
  SequentialSweepConfig s = sequential_config(c, policies, n_max);

  std::unique_ptr<SequentialSweepProblem> problem;
  if (c.environment.kind == EnvironmentKind::tabular) {
    const TabularMDPSpec spec = make_tabular_spec(c.environment);
    s.gamma = c.estimator.gamma;
    s.q = c.estimator.q_mode == "exact" ? exact_q_function(spec, *policies.target, s.gamma) : QFunction::zero();
    problem = std::make_unique<SequentialSweepProblem>(spec, s);
  } else {
    const CartPoleSpec spec = make_cartpole_spec(c.environment);
    s.q = QFunction::zero();
    const MonteCarloEstimate truth =
        monte_carlo_value(spec, *policies.target, c.truth.episodes, s.gamma, substream_seed(c.sweep.seed, 0xfeed));
    problem = std::make_unique<SequentialSweepProblem>(spec, s, truth.value, truth.standard_error);
  }
  const fs::path dir = prepare_output(c);
  SweepOptions o;
  o.ns = c.sweep.ns;
  o.replications = c.sweep.replications;
  o.seed = c.sweep.seed;
  o.workers = c.sweep.workers;
  const SweepReport report = run_sweep(*problem, o);

  if (wants(c, "csv")) write_sweep_csv(report, (dir / "sweep.csv").string());
  // Paired variance differences between neighbouring k values of each estimator.
  json diffs = json::array();
  for (std::size_t n : report.ns)
    for (const auto& e : s.estimators)
      for (std::size_t i = 0; i + 1 < s.ks.size(); ++i) {
        const PairedDifference d = report.variance_difference({e, s.ks[i + 1]}, {e, s.ks[i]}, n);
        diffs.push_back({{"estimator", e}, {"n", n}, {"from_k", s.ks[i]}, {"to_k", s.ks[i + 1]},
                         {"variance_difference", d.difference}, {"se", d.se}});
      }
  json rows = json::array();
  for (const SweepRow& r : report.rows) rows.push_back(to_json(r));
  if (wants(c, "json"))
    write_json({{"truth", report.truth}, {"truth_se", report.truth_se}, {"rows", rows}, {"variance_steps", diffs}},
               (dir / "diagnostics.json").string());

  std::cout << "truth " << report.truth << "\n";
  for (const SweepRow& r : report.rows)
    std::cout << r.column.estimator << "  k=" << r.column.k << "  n=" << r.n << "  bias " << fmt(r.bias)
              << "  var " << fmt(r.variance) << " (" << fmt(r.variance_se, 3) << ")  failures " << r.failures
              << (r.valid ? "" : "  INVALID") << "\n";
  return 0;
}

// select-history ----------------------------------------------------------

ExperimentConfig selection_defaults() {
  ExperimentConfig c;
  c.output.directory = "select-history";
  return c;
}

void check_matches_environment(const Dataset& data, const EnvironmentConfig& env) {
  if (data.kind != env.kind)
    throw ValidationError("dataset kind " + to_string(data.kind) + " does not match environment " +
                          to_string(env.kind));
  if (env.kind == EnvironmentKind::tabular) {
    const TabularMDPSpec spec = make_tabular_spec(env);
    if (data.num_actions != spec.num_actions) throw ValidationError("dataset action count does not match");
    for (const Trajectory& tr : data.trajectories)
      for (std::size_t t = 0; t < tr.length(); ++t)
        if (tr.discrete_state(t) < 0 || static_cast<std::size_t>(tr.discrete_state(t)) >= spec.num_states)
          throw ValidationError("dataset state outside the environment's state space");
  } else if (data.state_dim != 4 || data.num_actions != 2) {
    throw ValidationError("dataset does not have cart-pole dimensions");
  }
}

int cmd_select_history(const ExperimentConfig& c) {
  const SelectionConfig& sel = c.selection;
  HistorySelection result;
  if (!sel.variances.empty()) {
    result = select_history(sel.candidates, sel.variances, sel.n);
    result.method = "given";
  } else {
    if (c.environment.kind == EnvironmentKind::bandit)
      throw ValidationError("history selection needs a sequential environment");
    const PolicyPair policies = make_policies(c.environment);
    Dataset data;
    if (!sel.dataset.empty()) {
      if (!fs::exists(sel.dataset)) throw ValidationError("dataset not found: " + sel.dataset);
      data = read_dataset(sel.dataset);
      check_matches_environment(data, c.environment);
    } else if (c.environment.kind == EnvironmentKind::tabular) {
      data = sample_trajectories(make_tabular_spec(c.environment), *policies.behavior, sel.n, c.sweep.seed);
    } else {
      data = sample_trajectories(make_cartpole_spec(c.environment), *policies.behavior, sel.n, c.sweep.seed);
    }
    std::optional<QFunction> q;
    if (c.environment.kind == EnvironmentKind::tabular && c.estimator.q_mode == "exact")
      q = exact_q_function(make_tabular_spec(c.environment), *policies.target, c.estimator.gamma);
    else
      q = QFunction::zero();
    SelectHistoryOptions o;
    o.estimator = parse_core_kind(sel.estimator);
    o.method = parse_variance_method(sel.method);
    o.bootstrap_resamples = sel.resamples;
    o.seed = c.sweep.seed;
    o.workers = c.sweep.workers;
    o.gamma = c.estimator.gamma;
    o.fit = c.policy.fit;
    result = select_history(data, *policies.target, make_policy_class(c, data.size()), &*q, sel.candidates, o);
  }
  const fs::path dir = prepare_output(c);
  write_json(to_json(result), (dir / "selection.json").string());
  std::cout << "h      variance        objective\n";
  for (std::size_t i = 0; i < result.candidates.size(); ++i)
    std::cout << result.candidates[i] << "      " << fmt(result.variances[i], 8) << "      "
              << fmt(result.objectives[i], 8) << "\n";
  std::cout << "h* = " << result.h_star << "\n";
  return 0;
}

// truth -------------------------------------------------------------------

ExperimentConfig truth_defaults() {
  ExperimentConfig c;
  c.output.directory = "truth";
  return c;
}

int cmd_truth(const ExperimentConfig& c) {
  const std::uint64_t seed = c.sweep.seed;
  json doc = {{"environment", to_string(c.environment.kind)}};
  MonteCarloEstimate mc;
  switch (c.environment.kind) {
    case EnvironmentKind::bandit: {
      const BanditSpec spec = make_bandit_spec(c.environment);
      mc = monte_carlo_value(spec, c.truth.episodes, seed);
      doc["exact"] = exact_value(spec);
      doc["spec"] = to_json(spec);
      break;
    }
    case EnvironmentKind::tabular: {
      const TabularMDPSpec spec = make_tabular_spec(c.environment);
      const PolicyPair p = make_policies(c.environment);
      mc = monte_carlo_value(spec, *p.target, c.truth.episodes, c.estimator.gamma, seed);
      doc["exact"] = exact_value(spec, *p.target, c.estimator.gamma);
      doc["spec"] = to_json(spec);
      break;
    }
    case EnvironmentKind::cartpole: {
      const CartPoleSpec spec = make_cartpole_spec(c.environment);
      const PolicyPair p = make_policies(c.environment);
      mc = monte_carlo_value(spec, *p.target, c.truth.episodes, c.estimator.gamma, seed);
      doc["spec"] = to_json(spec);
      break;
    }
  }
  doc["monte_carlo"] = to_json(mc);
  doc["seed"] = seed;
  doc["gamma"] = c.estimator.gamma;
  const fs::path dir = prepare_output(c);
  write_json(doc, (dir / "truth.json").string());
  std::cout << "value " << fmt(mc.value, 10) << " +- " << fmt(mc.standard_error, 4) << " (" << mc.episodes
            << " episodes)\n";
  if (doc.contains("exact")) std::cout << "exact " << fmt(doc["exact"].get<double>(), 10) << "\n";
  return 0;
}

// simulate ----------------------------------------------------------------

ExperimentConfig simulate_defaults() {
  ExperimentConfig c;
  c.output.directory = "simulate";
  return c;
}

int cmd_simulate(const ExperimentConfig& c) {
  Dataset data;
  json spec;
  switch (c.environment.kind) {
    case EnvironmentKind::bandit: {
      const BanditSpec s = make_bandit_spec(c.environment);
      data = sample_bandit_dataset(s, c.simulate.n, c.sweep.seed);
      spec = to_json(s);
      break;
    }
    case EnvironmentKind::tabular: {
      const TabularMDPSpec s = make_tabular_spec(c.environment);
      data = sample_trajectories(s, *make_policies(c.environment).behavior, c.simulate.n, c.sweep.seed);
      spec = to_json(s);
      break;
    }
    case EnvironmentKind::cartpole: {
      const CartPoleSpec s = make_cartpole_spec(c.environment);
      data = sample_trajectories(s, *make_policies(c.environment).behavior, c.simulate.n, c.sweep.seed);
      spec = to_json(s);
      break;
    }
  }
  const fs::path dir = prepare_output(c);
  const std::string path = (dir / "dataset.csv").string();
  write_dataset(data, path, spec);
  std::cout << "wrote " << data.size() << " trajectories to " << path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Off-policy evaluation experiments"};
  app.require_subcommand(1);
  GlobalFlags flags;
  app.add_option("--config", flags.config_path, "JSON experiment config")->check(CLI::ExistingFile);
  app.add_option("--seed", flags.seed, "root RNG seed");
  app.add_option("--out", flags.out, "output directory");
  app.add_option("--workers", flags.workers, "worker threads (0: all cores; env OPE_LAB_WORKERS)");
  app.add_option("--replications", flags.replications, "replications per sweep cell");
  app.fallthrough();

  struct Command {
    const char* name;
    const char* help;
    ExperimentConfig (*defaults)();
    int (*run)(const ExperimentConfig&);
  };
  const Command commands[] = {
      {"bandit-demo", "bias and MSE of the three bandit IS estimators over n", bandit_defaults, cmd_bandit_demo},
      {"sweep", "replicated bias/variance/MSE over estimators, k and n", sweep_defaults, cmd_sweep},
      {"select-history", "choose the history length by the BIC-style criterion", selection_defaults,
       cmd_select_history},
      {"truth", "Monte Carlo value of the target policy", truth_defaults, cmd_truth},
      {"simulate", "generate a behavior dataset", simulate_defaults, cmd_simulate},
  };
  for (const Command& cmd : commands) app.add_subcommand(cmd.name, cmd.help);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    for (const Command& cmd : commands)
      if (app.got_subcommand(cmd.name)) return cmd.run(resolve(cmd.defaults(), flags));
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "failure: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
