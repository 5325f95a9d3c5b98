#include "ope/io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "ope/common.hpp"
#include "ope/features.hpp"

namespace ope {

using nlohmann::json;

std::string format_double(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, res.ptr);
}

std::string metadata_path(const std::string& csv_path) {
  const std::string ext = ".csv";
  if (csv_path.size() > ext.size() && csv_path.compare(csv_path.size() - ext.size(), ext.size(), ext) == 0)
    return csv_path.substr(0, csv_path.size() - ext.size()) + ".meta.json";
  return csv_path + ".meta.json";
}

void write_json(const json& doc, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << doc.dump(2) << '\n';
}

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError("malformed JSON in " + path + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Datasets

void write_dataset(const Dataset& data, const std::string& csv_path, const json& spec) {
  data.validate();
  std::ofstream out(csv_path);
  if (!out) throw std::runtime_error("cannot write " + csv_path);
  out << "traj_id,t";
  if (data.state_dim == 1) {
    out << ",state";
  } else {
    for (std::size_t j = 0; j < data.state_dim; ++j) out << ",state_" << j;
  }
  out << ",action,reward\n";
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Trajectory& tr = data[i];
    for (std::size_t t = 0; t < tr.length(); ++t) {
      out << i << ',' << t;
      for (double v : tr.state(t)) out << ',' << format_double(v);
      out << ',' << tr.actions[t] << ',' << format_double(tr.rewards[t]) << '\n';
    }
  }
  if (!out) throw std::runtime_error("error writing " + csv_path);

  json meta = {{"kind", to_string(data.kind)},
               {"state_dim", data.state_dim},
               {"num_states", data.num_states},
               {"num_actions", data.num_actions},
               {"horizon", data.horizon()},
               {"trajectories", data.size()},
               {"reward_bound", data.reward_bound},
               {"root_seed", data.root_seed},
               {"seeds", data.seeds}};
  if (!spec.is_null()) meta["spec"] = spec;
  write_json(meta, metadata_path(csv_path));
}

namespace {

template <typename T>
T parse_number(const std::string& field, const std::string& where) {
  T value{};
  const char* first = field.data();
  const char* last = field.data() + field.size();
  const auto res = std::from_chars(first, last, value);
  if (res.ec != std::errc() || res.ptr != last) throw ValidationError("bad number '" + field + "' at " + where);
  return value;
}

}  // namespace

Dataset read_dataset(const std::string& csv_path) {
  const json meta = read_json(metadata_path(csv_path));
  Dataset data;
  try {
    data.kind = parse_environment_kind(meta.at("kind").get<std::string>());
    data.state_dim = meta.at("state_dim").get<std::size_t>();
    data.num_states = meta.at("num_states").get<std::size_t>();
    data.num_actions = meta.at("num_actions").get<std::size_t>();
    data.reward_bound = meta.at("reward_bound").get<double>();
    data.root_seed = meta.at("root_seed").get<std::uint64_t>();
    data.seeds = meta.at("seeds").get<std::vector<std::uint64_t>>();
  } catch (const json::exception& e) {
    throw ValidationError("incomplete dataset metadata: " + std::string(e.what()));
  }
  const std::size_t horizon = meta.at("horizon").get<std::size_t>();
  const std::size_t n = meta.at("trajectories").get<std::size_t>();
  data.trajectories.assign(n, Trajectory(horizon, data.state_dim));

  std::ifstream in(csv_path);
  if (!in) throw ValidationError("cannot open dataset " + csv_path);
  std::string line;
  std::getline(in, line);  // header
  const std::size_t columns = 4 + data.state_dim;
  std::vector<std::string> fields;
  std::size_t line_no = 1, rows = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    fields.clear();
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    const std::string where = csv_path + ":" + std::to_string(line_no);
    if (fields.size() != columns) throw ValidationError("wrong column count at " + where);
    const auto i = parse_number<std::size_t>(fields[0], where);
    const auto t = parse_number<std::size_t>(fields[1], where);
    if (i >= n || t > horizon) throw ValidationError("index out of range at " + where);
    Trajectory& tr = data.trajectories[i];
    for (std::size_t j = 0; j < data.state_dim; ++j) tr.state(t)[j] = parse_number<double>(fields[2 + j], where);
    tr.actions[t] = parse_number<int>(fields[2 + data.state_dim], where);
    tr.rewards[t] = parse_number<double>(fields[3 + data.state_dim], where);
    ++rows;
  }
  if (rows != n * (horizon + 1)) throw ValidationError("dataset " + csv_path + " is missing rows");
  data.validate();
  return data;
}

// ---------------------------------------------------------------------------
// Policies

json to_json(const ParametricHistoryPolicy& policy, const FitReport* report) {
  const Eigen::VectorXd& theta = policy.theta();
  json doc = {{"k", policy.history_length()},
              {"basis", policy.basis().id()},
              {"num_actions", policy.num_actions()},
              {"encoding", to_string(policy.encoding())},
              {"mixing", policy.mixing()},
              {"theta", std::vector<double>(theta.data(), theta.data() + theta.size())}};
  if (report != nullptr) {
    doc["fit"] = {{"log_likelihood", report->log_likelihood},
                  {"gradient_norm", report->gradient_norm_at_solution},
                  {"iterations", report->iterations},
                  {"converged", report->converged},
                  {"gradient_steps", report->gradient_steps},
                  {"distinct_rows", report->distinct_rows}};
  }
  return doc;
}

ParametricHistoryPolicy policy_from_json(const json& doc) {
  try {
    ParametricHistoryPolicy p(make_basis(doc.at("basis").get<std::string>()), doc.at("k").get<std::size_t>(),
                              doc.at("num_actions").get<std::size_t>(),
                              parse_action_encoding(doc.at("encoding").get<std::string>()),
                              doc.at("mixing").get<double>());
    const auto theta = doc.at("theta").get<std::vector<double>>();
    p.set_theta(Eigen::Map<const Eigen::VectorXd>(theta.data(), static_cast<Eigen::Index>(theta.size())));
    return p;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed policy record: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Reports

void write_sweep_csv(const SweepReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "estimator,k,n,replications,bias,bias_se,variance,variance_se,mse,mse_se,failures\n";
  for (const SweepRow& r : report.rows) {
    out << r.column.estimator << ',' << r.column.k << ',' << r.n << ',' << r.replications << ','
        << format_double(r.bias) << ',' << format_double(r.bias_se) << ',' << format_double(r.variance) << ','
        << format_double(r.variance_se) << ',' << format_double(r.mse) << ',' << format_double(r.mse_se) << ','
        << r.failures << '\n';
  }
  if (!out) throw std::runtime_error("error writing " + path);
}

namespace {

json number(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

}  // namespace

json to_json(const SweepRow& r) {
  return {{"estimator", r.column.estimator}, {"k", r.column.k},       {"n", r.n},
          {"replications", r.replications},  {"failures", r.failures}, {"valid", r.valid},
          {"mean", number(r.mean)},          {"bias", number(r.bias)}, {"bias_se", number(r.bias_se)},
          {"variance", number(r.variance)},  {"variance_se", number(r.variance_se)},
          {"mse", number(r.mse)},            {"mse_se", number(r.mse_se)}};
}

json to_json(const ProjectionReport& r) {
  json fisher = json::array();
  for (Eigen::Index i = 0; i < r.fisher.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < r.fisher.cols(); ++j) row.push_back(r.fisher(i, j));
    fisher.push_back(row);
  }
  return {{"core", r.core},
          {"k", r.k},
          {"n", r.n},
          {"var_raw", r.var_raw},
          {"cross_moment", std::vector<double>(r.cross_moment.data(), r.cross_moment.data() + r.cross_moment.size())},
          {"fisher", fisher},
          {"fisher_min_eigenvalue", r.fisher_min_eigenvalue},
          {"ridge", r.ridge},
          {"var_projected", r.var_projected}};
}

json to_json(const HistorySelection& s) {
  json rows = json::array();
  for (std::size_t i = 0; i < s.candidates.size(); ++i)
    rows.push_back({{"h", s.candidates[i]}, {"variance", s.variances[i]}, {"objective", s.objectives[i]}});
  return {{"n", s.n}, {"method", s.method}, {"h_star", s.h_star}, {"candidates", rows}};
}

json to_json(const CoverageReport& r) {
  json doc = {{"r_max", r.r_max}, {"c_hat", number(r.c_hat)}, {"eps_hat", r.eps_hat}};
  doc["u_max"] = r.u_max ? json(*r.u_max) : json(nullptr);
  return doc;
}

json to_json(const MonteCarloEstimate& e) {
  return {{"value", e.value}, {"standard_error", e.standard_error}, {"episodes", e.episodes}};
}

json to_json(const EstimateDiagnostics& d) {
  return {{"kind", d.kind},
          {"k", d.k},
          {"n", d.n},
          {"coverage", d.coverage},
          {"weight_concentration", d.weight_concentration},
          {"effective_sample_size", d.effective_sample_size},
          {"ridge", d.ridge}};
}

}  // namespace ope
