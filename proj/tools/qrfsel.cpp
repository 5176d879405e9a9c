// qrfsel command-line tool.

#include <CLI11.hpp>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "qrfsel/baselines.hpp"
#include "qrfsel/config.hpp"
#include "qrfsel/dataset.hpp"
#include "qrfsel/forward_selection.hpp"
#include "qrfsel/quantile_forest.hpp"
#include "qrfsel/random.hpp"
#include "qrfsel/report.hpp"
#include "qrfsel/scoring.hpp"
#include "qrfsel/simulation.hpp"
#include "qrfsel/verification.hpp"

namespace {

using namespace qrfsel;
using nlohmann::json;

enum ExitCode : int {
  kOk = 0,
  kOther = 1,
  kUsage = 2,
  kFile = 3,
  kConfig = 4,
  kData = 5,
  kNumerical = 6,
};

constexpr const char* kExitCodeHelp =
    "Exit codes:\n"
    "  0  success\n"
    "  1  unexpected internal error\n"
    "  2  usage error (unknown flag, missing argument)\n"
    "  3  file error (missing input, unwritable output)\n"
    "  4  invalid configuration value\n"
    "  5  data error (missing column, blank or non-numeric cell)\n"
    "  6  numerical failure (no out-of-bag trees, NGR did not converge)\n";

class FileError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// --- shared option groups --------------------------------------------------

struct DataOptions {
  std::string path;
  std::string response = "y";
};

// Forward-selection and forest settings: --config file first, then flags.
struct ForestOptions {
  std::string config_path;
  std::map<std::string, std::string> flags;

  void add_to(CLI::App* app) {
    app->add_option("--config", config_path, "key = value file, or a JSON report whose config block is reused");
    add(app, "--trees", "trees", "number of trees (default 1000)");
    add(app, "--subsample-fraction", "subsample_fraction", "subsample fraction s (default 0.5)");
    add(app, "--mtry", "mtry", "split candidates per node, 0 = all (default 0)");
    add(app, "--min-node-size", "min_node_size", "minimum structure rows per leaf (default 1)");
    add(app, "--split-quantiles", "split_quantiles", "relabeling levels, comma separated (default 0.25,0.5,0.75)");
    add(app, "--crps-k", "crps_grid_k", "CRPS quadrature grid size (default 50)");
    add(app, "--alpha", "alpha", "significance level of the stopping test (default 0.05)");
  }

  void add(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
    app->add_option_function<std::string>(flag, [this, key](const std::string& v) { flags[key] = v; }, help);
  }

  RunConfig resolve() const {
    RunConfig config;
    if (!config_path.empty()) config = read_config(config_path);
    for (const auto& [key, value] : flags) apply_config_value(config, key, value);
    return config;
  }

  static RunConfig read_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FileError("cannot read config file '" + path.string() + "'");
    std::stringstream buffer;
    buffer << in.rdbuf();
    const auto text = buffer.str();
    const auto first = text.find_first_not_of(" \t\r\n");
    if (first == std::string::npos || text[first] != '{') return parse_config(text);
    json report;
    try {
      report = json::parse(text);
    } catch (const json::exception& e) {
      throw ConfigError("config file '" + path.string() + "' is not valid JSON: " + e.what());
    }
    if (!report.contains("config") || !report["config"].is_object())
      throw ConfigError("JSON config file '" + path.string() + "' has no config object");
    RunConfig config;
    for (const auto& [key, value] : report["config"].items())
      apply_config_value(config, key, value.is_string() ? value.get<std::string>() : value.dump());
    return config;
  }
};

void add_data_options(CLI::App* app, DataOptions& data, const std::string& flag = "--data") {
  app->add_option(flag, data.path, "CSV file with a header row")->required();
  app->add_option("--response", data.response, "response column name")->capture_default_str();
}

std::uint64_t resolve_seed(std::optional<std::uint64_t> seed) {
  if (seed) return *seed;
  std::random_device device;
  const std::uint64_t generated = (static_cast<std::uint64_t>(device()) << 32) ^ device();
  std::cerr << "seed: " << generated << " (generated)\n";
  return generated;
}

void write_output(const std::string& out_path, const std::string& content) {
  if (out_path.empty()) {
    std::cout << content;
    return;
  }
  std::ofstream out(out_path, std::ios::binary);
  if (!out) throw FileError("cannot write '" + out_path + "'");
  out << content;
  if (!out) throw FileError("failed writing '" + out_path + "'");
}

std::string names_line(const Dataset& data, const IndexSet& set) {
  std::string line;
  for (auto j : set) line += (line.empty() ? "" : " ") + data.names()[j];
  return line.empty() ? "(none)" : line;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

IndexSet parse_covariates(const Dataset& data, const std::string& list) {
  IndexSet out;
  std::stringstream in(list);
  std::string name;
  while (std::getline(in, name, ','))
    if (!name.empty()) out.insert(data.index_of(name));
  return out;
}

// Covariates from --covariates or from the "selected" names of a report.
IndexSet covariates_from(const Dataset& data, const std::string& list, const std::string& report_path) {
  if (!report_path.empty()) {
    std::ifstream in(report_path);
    if (!in) throw FileError("cannot read report '" + report_path + "'");
    json report;
    try {
      report = json::parse(in);
    } catch (const json::exception& e) {
      throw ConfigError("report '" + report_path + "' is not valid JSON: " + e.what());
    }
    if (!report.contains("selected") || !report["selected"].is_array())
      throw ConfigError("report '" + report_path + "' has no selected array");
    IndexSet out;
    for (const auto& name : report["selected"]) {
      if (!name.is_string()) throw ConfigError("report '" + report_path + "' lists a non-string covariate");
      out.insert(data.index_of(name.get<std::string>()));
    }
    return out;
  }
  return parse_covariates(data, list);
}

// Predictive distributions for held-out rows: honest quantile forest on the
// chosen columns (training-sample climatology when none are chosen) or NGR.
struct Forecaster {
  std::string method;
  std::optional<QuantileForest> forest;
  std::optional<NgrModel> ngr;
  StepCDF climatology;

  StepCDF distribution(std::span<const double> x) const {
    return forest ? forest->predict_distribution(x) : climatology;
  }
};

Forecaster make_forecaster(const std::string& method, const Dataset& train, const IndexSet& covariates,
                           const RunConfig& config, std::uint64_t seed) {
  Forecaster f;
  f.method = method;
  if (method == "ngr") {
    f.ngr = ngr_fit(train, covariates);
  } else if (method == "qrf") {
    if (covariates.empty())
      f.climatology = StepCDF::empirical(train.response());
    else
      f.forest = QuantileForest::fit(train, covariates, config.forest, seed, config.threads);
  } else {
    throw ConfigError("unknown forecast method '" + method + "' (expected qrf or ngr)");
  }
  return f;
}

void check_same_columns(const Dataset& train, const Dataset& test) {
  if (train.names() != test.names()) throw DataError("training and test files have different covariate columns");
}

// --- subcommands -------------------------------------------------------------

struct SimulateCmd {
  int model = 1;
  std::size_t n = 1000;
  double rho = 0.0;
  std::size_t d = 25;
  std::optional<std::uint64_t> seed;
  std::string out;

  void add_to(CLI::App* app) {
    app->add_option("--model", model, "generative model 1, 2 or 3")->capture_default_str();
    app->add_option("--n", n, "observations")->capture_default_str();
    app->add_option("--rho", rho, "within-block correlation in [0, 1)")->capture_default_str();
    app->add_option("--d", d, "covariates (blocks of 5)")->capture_default_str();
    app->add_option("--seed", seed, "master seed (generated and printed when absent)");
    app->add_option("--out", out, "output CSV (stdout when absent)");
  }

  int run() {
    SimulationConfig config;
    config.model = model;
    config.n = n;
    config.rho = rho;
    config.d = d;
    config.seed = resolve_seed(seed);
    const auto sim = simulate_model(config);
    std::ostringstream csv;
    write_csv(sim.data, csv);
    write_output(out, csv.str());
    return kOk;
  }
};

struct SelectCmd {
  DataOptions data;
  ForestOptions forest;
  std::optional<std::uint64_t> seed;
  std::size_t threads = 1;
  std::string out;

  void add_to(CLI::App* app) {
    add_data_options(app, data);
    forest.add_to(app);
    app->add_option("--seed", seed, "master seed (generated and printed when absent)");
    app->add_option("--threads", threads, "worker threads; results do not depend on it")->capture_default_str();
    app->add_option("--out", out, "trace JSON (stdout when absent)");
  }

  int run() {
    const auto dataset = load_csv(data.path, data.response);
    auto config = forest.resolve();
    if (seed) config.seed = seed;
    config.seed = resolve_seed(config.seed);
    config.threads = threads;
    config.validate();
    const auto start = std::chrono::steady_clock::now();
    std::cerr << "forward selection: n=" << dataset.n() << " d=" << dataset.d() << " trees=" << config.forest.trees
              << " alpha=" << config.alpha << "\n";
    const auto trace = select(dataset, config, [&](const StepRecord& s) {
      std::cerr << "  step " << s.step << ": best " << dataset.names()[s.chosen];
      if (s.w) std::cerr << ", W=" << *s.w << " M=" << s.m << " C=" << *s.critical;
      std::cerr << (s.decision == Decision::kStop ? " -> stop" : "") << "\n";
    });
    const auto report = selection_report(trace, dataset, {threads, seconds_since(start)});
    write_output(out, dump_report(report));
    if (!out.empty()) std::cout << names_line(dataset, trace.selected) << "\n";
    return kOk;
  }
};

struct BackMseCmd {
  DataOptions data;
  BackwardOptions options;
  std::optional<std::uint64_t> seed;
  std::string out;

  void add_to(CLI::App* app) {
    add_data_options(app, data);
    app->add_option("--trees", options.forest.trees, "trees per forest")->capture_default_str();
    app->add_option("--mtry", options.forest.mtry, "split candidates, 0 = ceil(|J|/3)")->capture_default_str();
    app->add_option("--min-leaf-size", options.forest.min_leaf_size, "minimum leaf size")->capture_default_str();
    app->add_option("--replicates", options.replicates, "forests averaged per step")->capture_default_str();
    app->add_option("--seed", seed, "master seed (generated and printed when absent)");
    app->add_option("--threads", options.threads, "worker threads")->capture_default_str();
    app->add_option("--out", out, "report JSON (stdout when absent)");
  }

  int run() {
    const auto dataset = load_csv(data.path, data.response);
    options.seed = resolve_seed(seed);
    const auto start = std::chrono::steady_clock::now();
    std::cerr << "backward elimination: n=" << dataset.n() << " d=" << dataset.d() << "\n";
    const auto result = backward_select_mse(dataset, options);
    write_output(out, dump_report(backward_report(result, options, dataset, {options.threads, seconds_since(start)})));
    if (!out.empty()) std::cout << names_line(dataset, result.selected) << "\n";
    return kOk;
  }
};

struct NgrCmd {
  DataOptions data;
  NgrOptions options;
  std::size_t threads = 1;
  std::string out;

  void add_to(CLI::App* app) {
    add_data_options(app, data);
    app->add_option("--tolerance", options.gradient_tolerance, "mean-gradient stopping rule")->capture_default_str();
    app->add_option("--max-iterations", options.max_iterations, "iteration cap")->capture_default_str();
    app->add_option("--threads", threads, "worker threads")->capture_default_str();
    app->add_option("--out", out, "report JSON (stdout when absent)");
  }

  int run() {
    const auto dataset = load_csv(data.path, data.response);
    const auto start = std::chrono::steady_clock::now();
    const auto result = ngr_bic_stepwise(dataset, options, threads);
    write_output(out, dump_report(ngr_report(result, options, dataset, {threads, seconds_since(start)})));
    if (!out.empty()) std::cout << names_line(dataset, result.model.covariates) << "\n";
    return kOk;
  }
};

struct EvaluateCmd {
  DataOptions train, test;
  ForestOptions forest;
  std::string covariates, report, method = "qrf", out;
  std::optional<std::uint64_t> seed;
  std::size_t threads = 1;

  void add_to(CLI::App* app) {
    add_data_options(app, train, "--train");
    app->add_option("--test", test.path, "held-out CSV with the same columns")->required();
    forest.add_to(app);
    app->add_option("--covariates", covariates, "comma-separated covariate names");
    app->add_option("--report", report, "take the covariates from a report's selected set")
        ->excludes(app->get_option("--covariates"));
    app->add_option("--method", method, "qrf or ngr")->capture_default_str();
    app->add_option("--seed", seed, "forest seed (generated and printed when absent)");
    app->add_option("--threads", threads, "worker threads")->capture_default_str();
    app->add_option("--out", out, "result JSON (stdout when absent)");
  }

  int run() {
    test.response = train.response;
    const auto tr = load_csv(train.path, train.response);
    const auto te = load_csv(test.path, test.response);
    check_same_columns(tr, te);
    const auto set = covariates_from(tr, covariates, report);
    auto config = forest.resolve();
    config.threads = threads;
    config.validate();
    const auto forest_seed = method == "qrf" ? resolve_seed(seed ? seed : config.seed) : 0;
    const auto f = make_forecaster(method, tr, set, config, forest_seed);
    const QuantileGrid grid(config.crps_grid_k);
    double exact = 0.0, quadrature = 0.0;
    for (std::size_t i = 0; i < te.n(); ++i) {
      const auto x = te.row(i);
      if (f.ngr) {
        exact += crps_gaussian(te.y(i), f.ngr->mean(x), f.ngr->sigma(x));
      } else {
        const auto cdf = f.distribution(x);
        exact += crps_cdf_form(te.y(i), cdf);
        std::vector<double> q(grid.k());
        for (std::size_t t = 0; t < grid.k(); ++t) q[t] = cdf.quantile(grid[t]);
        quadrature += crps_from_quantiles(te.y(i), q);
      }
    }
    const double m = static_cast<double>(te.n());
    json result = {{"schema_version", kReportSchemaVersion},
                   {"method", method},
                   {"covariates", tr.names_of(set)},
                   {"n_train", tr.n()},
                   {"n_test", te.n()},
                   {"crps", exact / m}};
    if (!f.ngr) {
      result["crps_quadrature"] = quadrature / m;
      result["crps_grid_k"] = config.crps_grid_k;
      result["seed"] = forest_seed;
      json cfg = json::object();
      for (const auto& [k, v] : config_entries(config)) cfg[k] = v;
      result["config"] = cfg;
    }
    write_output(out, dump_report(result));
    return kOk;
  }
};

struct VerifyCmd {
  DataOptions train, test;
  ForestOptions forest;
  std::string covariates, report, method = "qrf", kind = "pit", out;
  std::size_t bins = 10;
  std::optional<double> threshold, level;
  std::optional<std::uint64_t> seed;
  std::size_t threads = 1;

  void add_to(CLI::App* app) {
    add_data_options(app, train, "--train");
    app->add_option("--test", test.path, "held-out CSV with the same columns")->required();
    forest.add_to(app);
    app->add_option("--covariates", covariates, "comma-separated covariate names");
    app->add_option("--report", report, "take the covariates from a report's selected set")
        ->excludes(app->get_option("--covariates"));
    app->add_option("--method", method, "qrf or ngr")->capture_default_str();
    app->add_option("--kind", kind, "pit, reliability or quantile_reliability")->capture_default_str();
    app->add_option("--bins", bins, "number of bins")->capture_default_str();
    app->add_option("--threshold", threshold, "event Y <= threshold (reliability)");
    app->add_option("--level", level, "quantile level tau (quantile_reliability)");
    app->add_option("--seed", seed, "seed for the forest and PIT randomisation");
    app->add_option("--threads", threads, "worker threads")->capture_default_str();
    app->add_option("--out", out, "diagram CSV (stdout when absent)");
  }

  int run() {
    test.response = train.response;
    const auto tr = load_csv(train.path, train.response);
    const auto te = load_csv(test.path, test.response);
    check_same_columns(tr, te);
    const auto set = covariates_from(tr, covariates, report);
    auto config = forest.resolve();
    config.threads = threads;
    config.validate();
    // NGR forecasts and their PIT values involve no randomness.
    const auto master = method == "ngr" ? 0 : resolve_seed(seed ? seed : config.seed);
    const auto f = make_forecaster(method, tr, set, config, derive_seed(master, {0}));

    BinnedDiagram diagram;
    if (kind == "pit") {
      Rng rng(derive_seed(master, {1}));
      std::vector<double> pit(te.n());
      for (std::size_t i = 0; i < te.n(); ++i) {
        const auto x = te.row(i);
        const double u = rng.uniform();  // drawn for every case so streams align across methods
        if (f.ngr)
          pit[i] = normal_cdf((te.y(i) - f.ngr->mean(x)) / f.ngr->sigma(x));
        else
          pit[i] = randomized_pit(f.distribution(x), te.y(i), u);
      }
      diagram = pit_histogram(pit, bins);
    } else if (kind == "reliability") {
      if (!threshold) throw ConfigError("--kind reliability needs --threshold");
      std::vector<double> probs(te.n());
      std::vector<int> outcomes(te.n());
      for (std::size_t i = 0; i < te.n(); ++i) {
        const auto x = te.row(i);
        probs[i] = f.ngr ? normal_cdf((*threshold - f.ngr->mean(x)) / f.ngr->sigma(x)) : f.distribution(x)(*threshold);
        outcomes[i] = te.y(i) <= *threshold ? 1 : 0;
      }
      diagram = reliability_diagram(probs, outcomes, bins, threshold);
    } else if (kind == "quantile_reliability") {
      if (!level) throw ConfigError("--kind quantile_reliability needs --level");
      if (!(*level > 0.0 && *level < 1.0)) throw ConfigError("--level must lie in (0, 1)");
      std::vector<double> q(te.n());
      for (std::size_t i = 0; i < te.n(); ++i) {
        const auto x = te.row(i);
        if (f.ngr) {
          // Gaussian quantile by bisection on the CDF.
          double lo = -40.0, hi = 40.0;
          for (int it = 0; it < 200; ++it) {
            const double mid = 0.5 * (lo + hi);
            (normal_cdf(mid) < *level ? lo : hi) = mid;
          }
          q[i] = f.ngr->mean(x) + f.ngr->sigma(x) * 0.5 * (lo + hi);
        } else {
          q[i] = f.distribution(x).quantile(*level);
        }
      }
      diagram = quantile_reliability(q, te.response(), *level, bins);
    } else {
      throw ConfigError("unknown diagram kind '" + kind + "'");
    }
    std::ostringstream csv;
    write_diagram_csv(csv, diagram);
    write_output(out, csv.str());
    return kOk;
  }
};

struct ExperimentCmd {
  SimulationConfig sim;
  std::string method = "forward_crps";
  ForestOptions forest;
  std::optional<std::size_t> backmse_trees;
  std::size_t replicates = 5;
  std::optional<std::uint64_t> seed;
  std::size_t threads = 1;
  std::string out, json_out;

  void add_to(CLI::App* app) {
    app->add_option("--model", sim.model, "generative model 1, 2 or 3")->capture_default_str();
    app->add_option("--n", sim.n, "observations per data set")->capture_default_str();
    app->add_option("--rho", sim.rho, "within-block correlation")->capture_default_str();
    app->add_option("--d", sim.d, "covariates")->capture_default_str();
    app->add_option("--reps", sim.replications, "replications")->capture_default_str();
    app->add_option("--method", method, "forward_crps, backmse or ngr_bic")->capture_default_str();
    forest.add_to(app);
    app->add_option("--backmse-trees", backmse_trees, "trees per backMSE forest (default 2000)");
    app->add_option("--replicates", replicates, "backMSE forests averaged per step")->capture_default_str();
    app->add_option("--seed", seed, "master seed (generated and printed when absent)");
    app->add_option("--threads", threads, "replications run in parallel")->capture_default_str();
    app->add_option("--out", out, "per-replication CSV (stdout when absent)");
    app->add_option("--json", json_out, "aggregate JSON summary");
  }

  int run() {
    const auto m = parse_method(method);
    MethodSettings settings;
    settings.forward = forest.resolve();
    if (backmse_trees) settings.backward.forest.trees = *backmse_trees;
    settings.backward.replicates = replicates;
    sim.seed = resolve_seed(seed ? seed : settings.forward.seed);
    settings.forward.seed = sim.seed;
    settings.forward.validate();
    const auto start = std::chrono::steady_clock::now();
    std::cerr << "experiment: model " << sim.model << ", " << to_string(m) << ", " << sim.replications
              << " replications\n";
    const auto summary = run_experiment(sim, m, settings, threads);
    std::cerr << "mean signal " << summary.mean_signal << ", mean noise " << summary.mean_noise << "\n";
    write_output(out, experiment_csv(summary));
    if (!json_out.empty())
      write_output(json_out, dump_report(experiment_report(summary, {threads, seconds_since(start)})));
    return kOk;
  }
};

int run(int argc, char** argv) {
  CLI::App app{"Forward variable selection for quantile random forests under the CRPS"};
  app.footer(kExitCodeHelp);
  app.require_subcommand(1, 1);

  SimulateCmd simulate;
  SelectCmd select_cmd;
  BackMseCmd backmse;
  NgrCmd ngr;
  EvaluateCmd evaluate;
  VerifyCmd verify;
  ExperimentCmd experiment;

  simulate.add_to(app.add_subcommand("simulate", "simulate a benchmark data set as CSV"));
  select_cmd.add_to(app.add_subcommand("select", "forward CRPS selection; writes the selection trace"));
  backmse.add_to(app.add_subcommand("backmse", "backward elimination by permutation importance"));
  ngr.add_to(app.add_subcommand("ngr", "Gaussian regression with BIC stepwise selection"));
  evaluate.add_to(app.add_subcommand("evaluate", "held-out CRPS of a covariate set"));
  verify.add_to(app.add_subcommand("verify", "calibration diagram data (PIT, reliability)"));
  experiment.add_to(app.add_subcommand("experiment", "replicated simulation study"));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  const auto* sub = app.get_subcommands().front();
  const auto& name = sub->get_name();
  if (name == "simulate") return simulate.run();
  if (name == "select") return select_cmd.run();
  if (name == "backmse") return backmse.run();
  if (name == "ngr") return ngr.run();
  if (name == "evaluate") return evaluate.run();
  if (name == "verify") return verify.run();
  return experiment.run();
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const MissingFileError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFile;
  } catch (const FileError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFile;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfig;
  } catch (const NgrRankError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kNumerical;
  } catch (const NgrConvergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kNumerical;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfig;
  } catch (const std::out_of_range& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfig;
  } catch (const std::domain_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kNumerical;
  } catch (const std::runtime_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kNumerical;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kOther;
  }
}
