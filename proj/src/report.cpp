#include "qrfsel/report.hpp"

#include <sstream>

namespace qrfsel {

namespace {

using nlohmann::json;

json names(const IndexSet& set, const Dataset& data) {
  json out = json::array();
  for (auto j : set) out.push_back(data.names()[j]);
  return out;
}

json runtime_json(const RuntimeInfo& runtime) {
  return {{"threads", runtime.threads}, {"wall_clock_seconds", runtime.wall_clock_seconds}};
}

json header(const std::string& method, const Dataset& data) {
  return {{"schema_version", kReportSchemaVersion},
          {"method", method},
          {"response", data.response_name()},
          {"n", data.n()},
          {"covariates", data.names()}};
}

}  // namespace

nlohmann::json selection_report(const SelectionTrace& trace, const Dataset& data, const RuntimeInfo& runtime) {
  json out = header("forward_crps", data);
  json config = json::object();
  for (const auto& [k, v] : config_entries(trace.config)) config[k] = v;
  out["config"] = config;
  out["seed"] = trace.config.seed ? json(*trace.config.seed) : json(nullptr);
  out["selected"] = names(trace.selected, data);
  out["selected_indices"] = trace.selected.items();
  out["forests_fitted"] = trace.forests_fitted;

  json steps = json::array();
  for (const auto& s : trace.steps) {
    json candidates = json::array();
    for (const auto& [q, e] : s.table.entries)
      candidates.push_back({{"index", q}, {"name", data.names()[q]}, {"risk", e.risk}, {"excluded", e.excluded}});
    json step = {{"step", s.step},
                 {"base", names(s.base, data)},
                 {"candidates", candidates},
                 {"chosen", data.names()[s.chosen]},
                 {"decision", s.decision == Decision::kContinue ? "continue" : "stop"},
                 {"degenerate", s.degenerate}};
    step["tested"] = s.tested ? json(data.names()[*s.tested]) : json(nullptr);
    step["W"] = s.w ? json(*s.w) : json(nullptr);
    step["M"] = s.m;
    step["C"] = s.critical ? json(*s.critical) : json(nullptr);
    steps.push_back(std::move(step));
  }
  out["steps"] = steps;
  out["runtime"] = runtime_json(runtime);
  return out;
}

nlohmann::json backward_report(const BackwardResult& result, const BackwardOptions& options, const Dataset& data,
                               const RuntimeInfo& runtime) {
  json out = header("backmse", data);
  out["config"] = {{"trees", options.forest.trees},
                   {"mtry", options.forest.mtry},
                   {"min_leaf_size", options.forest.min_leaf_size},
                   {"replicates", options.replicates}};
  out["seed"] = options.seed;
  out["selected"] = names(result.selected, data);
  out["selected_indices"] = result.selected.items();
  out["selected_null"] = result.selected_null;
  out["null_mse"] = result.null_mse;
  json path = json::array();
  for (const auto& step : result.path) {
    json importance = json::array();
    for (const auto& [j, v] : step.importance) importance.push_back({{"name", data.names()[j]}, {"importance", v}});
    json entry = {{"covariates", names(step.covariates, data)}, {"oob_mse", step.oob_mse}, {"importance", importance}};
    entry["removed"] = step.removed ? json(data.names()[*step.removed]) : json(nullptr);
    path.push_back(std::move(entry));
  }
  out["path"] = path;
  out["runtime"] = runtime_json(runtime);
  return out;
}

nlohmann::json ngr_report(const NgrStepwiseResult& result, const NgrOptions& options, const Dataset& data,
                          const RuntimeInfo& runtime) {
  json out = header("ngr_bic", data);
  out["config"] = {{"gradient_tolerance", options.gradient_tolerance}, {"max_iterations", options.max_iterations}};
  out["seed"] = nullptr;
  const auto& m = result.model;
  out["selected"] = names(m.covariates, data);
  out["selected_indices"] = m.covariates.items();
  auto vec = [](const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  out["model"] = {{"beta", vec(m.beta)},
                  {"gamma", vec(m.gamma)},
                  {"beta_se", vec(m.beta_se)},
                  {"gamma_se", vec(m.gamma_se)},
                  {"log_likelihood", m.log_likelihood},
                  {"bic", m.bic},
                  {"iterations", m.iterations}};
  json moves = json::array();
  for (const auto& mv : result.moves)
    moves.push_back(
        {{"action", mv.add ? "add" : "remove"}, {"covariate", data.names()[mv.covariate]}, {"bic", mv.bic}});
  out["moves"] = moves;
  out["runtime"] = runtime_json(runtime);
  return out;
}

nlohmann::json experiment_report(const ExperimentSummary& summary, const RuntimeInfo& runtime) {
  const auto& c = summary.config;
  json out = {{"schema_version", kReportSchemaVersion},
              {"method", to_string(summary.method)},
              {"config",
               {{"model", c.custom ? c.custom->name : "model" + std::to_string(c.model)},
                {"n", c.n},
                {"rho", c.rho},
                {"d", c.d},
                {"replications", c.replications}}},
              {"seed", c.seed},
              {"signals", summary.signals.items()},
              {"mean_signal", summary.mean_signal},
              {"mean_noise", summary.mean_noise},
              {"selection_frequency", summary.selection_frequency}};
  json rows = json::array();
  for (const auto& r : summary.rows)
    rows.push_back({{"replication", r.replication},
                    {"data_seed", r.data_seed},
                    {"method_seed", r.method_seed},
                    {"selected", r.selected.items()},
                    {"signal", r.signal},
                    {"noise", r.noise}});
  out["replications"] = rows;
  out["runtime"] = runtime_json(runtime);
  return out;
}

std::string dump_report(const nlohmann::json& report) { return report.dump(2) + "\n"; }

nlohmann::json strip_runtime(nlohmann::json report) {
  report.erase("runtime");
  return report;
}

std::string experiment_csv(const ExperimentSummary& summary) {
  std::ostringstream out;
  out << "replication,data_seed,method_seed,selected,signal,noise\n";
  for (const auto& r : summary.rows) {
    out << r.replication << ',' << r.data_seed << ',' << r.method_seed << ',';
    for (std::size_t k = 0; k < r.selected.size(); ++k) out << (k ? ";" : "") << "X" << r.selected[k] + 1;
    out << ',' << r.signal << ',' << r.noise << '\n';
  }
  return out.str();
}

}  // namespace qrfsel
