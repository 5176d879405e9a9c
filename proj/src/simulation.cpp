#include "qrfsel/simulation.hpp"

#include <cmath>
#include <stdexcept>

#include "qrfsel/forward_selection.hpp"
#include "qrfsel/parallel.hpp"
#include "qrfsel/random.hpp"

namespace qrfsel {

GenerativeModel builtin_model(int id) {
  switch (id) {
    case 1:
      return {"model1", [](auto x) { return x[0] + x[5] / 2.0 + x[10] / 4.0; }, [](auto) { return 1.0; },
              IndexSet{0, 5, 10}, 11};
    case 2:
      return {"model2", [](auto x) { return x[0]; }, [](auto x) { return std::exp(x[5] / 2.0 + x[10] / 3.0); },
              IndexSet{0, 5, 10}, 11};
    case 3:
      return {"model3", [](auto x) { return x[0] >= 0.0 ? x[5] * x[5] : -x[5]; },
              [](auto x) { return x[10] >= 0.0 ? 2.0 : 1.0; }, IndexSet{0, 5, 10}, 11};
    default:
      throw std::invalid_argument("unknown model id " + std::to_string(id) + " (expected 1, 2 or 3)");
  }
}

GenerativeModel null_model() {
  return {"null", [](auto) { return 0.0; }, [](auto) { return 1.0; }, IndexSet{}, 1};
}

GenerativeModel SimulationConfig::resolved_model() const { return custom ? *custom : builtin_model(model); }

void SimulationConfig::validate() const {
  if (!(rho >= 0.0 && rho < 1.0)) throw std::invalid_argument("rho must lie in [0, 1)");
  if (n < 1 || d < 1) throw std::invalid_argument("simulation needs n >= 1 and d >= 1");
  if (block_size < 1) throw std::invalid_argument("block size must be >= 1");
  const auto m = resolved_model();
  if (d < m.min_dimension)
    throw std::invalid_argument(m.name + " needs at least " + std::to_string(m.min_dimension) + " covariates");
}

std::vector<std::vector<double>> sample_block_mvn(std::size_t n, std::size_t d, double rho, std::uint64_t seed,
                                                  std::size_t block_size) {
  if (!(rho >= 0.0 && rho < 1.0)) throw std::invalid_argument("rho must lie in [0, 1)");
  if (block_size < 1) throw std::invalid_argument("block size must be >= 1");
  Rng rng(seed);
  const double shared = std::sqrt(rho);
  const double own = std::sqrt(1.0 - rho);
  const std::size_t blocks = (d + block_size - 1) / block_size;
  std::vector<std::vector<double>> columns(d, std::vector<double>(n));
  std::vector<double> w(blocks);
  for (std::size_t i = 0; i < n; ++i) {
    for (auto& v : w) v = rng.normal();
    for (std::size_t j = 0; j < d; ++j) columns[j][i] = shared * w[j / block_size] + own * rng.normal();
  }
  return columns;
}

SimulatedData simulate_model(const SimulationConfig& config) {
  config.validate();
  const auto model = config.resolved_model();
  auto columns = sample_block_mvn(config.n, config.d, config.rho, derive_seed(config.seed, {0}), config.block_size);
  Rng noise(derive_seed(config.seed, {1}));
  std::vector<double> y(config.n);
  std::vector<double> row(config.d);
  for (std::size_t i = 0; i < config.n; ++i) {
    for (std::size_t j = 0; j < config.d; ++j) row[j] = columns[j][i];
    y[i] = model.mean(row) + model.scale(row) * noise.normal();
  }
  std::vector<std::string> names;
  for (std::size_t j = 0; j < config.d; ++j) names.push_back("X" + std::to_string(j + 1));
  return {Dataset(std::move(y), std::move(columns), std::move(names), "y"), model.signals};
}

std::string to_string(Method method) {
  switch (method) {
    case Method::kForwardCrps:
      return "forward_crps";
    case Method::kBackMse:
      return "backmse";
    case Method::kNgrBic:
      return "ngr_bic";
  }
  return "unknown";
}

Method parse_method(const std::string& name) {
  if (name == "forward_crps") return Method::kForwardCrps;
  if (name == "backmse") return Method::kBackMse;
  if (name == "ngr_bic") return Method::kNgrBic;
  throw std::invalid_argument("unknown method '" + name + "' (expected forward_crps, backmse or ngr_bic)");
}

IndexSet run_method(const Dataset& data, Method method, const MethodSettings& settings, std::uint64_t seed) {
  switch (method) {
    case Method::kForwardCrps: {
      auto config = settings.forward;
      config.seed = seed;
      config.threads = 1;
      return select(data, config).selected;
    }
    case Method::kBackMse: {
      auto options = settings.backward;
      options.seed = seed;
      options.threads = 1;
      return backward_select_mse(data, options).selected;
    }
    case Method::kNgrBic:
      return ngr_bic_stepwise(data, settings.ngr, 1).model.covariates;
  }
  throw std::invalid_argument("unknown method");
}

ExperimentSummary run_experiment(const SimulationConfig& config, Method method, const MethodSettings& settings,
                                 std::size_t threads) {
  config.validate();
  ExperimentSummary summary;
  summary.method = method;
  summary.config = config;
  summary.signals = config.resolved_model().signals;
  summary.rows.resize(config.replications);

  parallel_for(config.replications, threads, [&](std::size_t r) {
    auto rep_config = config;
    auto& row = summary.rows[r];
    row.replication = r;
    row.data_seed = derive_seed(config.seed, {r, 0});
    row.method_seed = derive_seed(config.seed, {r, 1});
    rep_config.seed = row.data_seed;
    const auto sim = simulate_model(rep_config);
    row.selected = run_method(sim.data, method, settings, row.method_seed);
    for (auto j : row.selected) (sim.signals.contains(j) ? row.signal : row.noise)++;
  });

  summary.selection_frequency.assign(config.d, 0.0);
  for (const auto& row : summary.rows) {
    summary.mean_signal += static_cast<double>(row.signal);
    summary.mean_noise += static_cast<double>(row.noise);
    for (auto j : row.selected) summary.selection_frequency[j] += 1.0;
  }
  if (!summary.rows.empty()) {
    const double reps = static_cast<double>(summary.rows.size());
    summary.mean_signal /= reps;
    summary.mean_noise /= reps;
    for (auto& f : summary.selection_frequency) f /= reps;
  }
  return summary;
}

}  // namespace qrfsel
