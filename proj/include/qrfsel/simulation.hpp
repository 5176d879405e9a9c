#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qrfsel/baselines.hpp"
#include "qrfsel/config.hpp"
#include "qrfsel/dataset.hpp"

namespace qrfsel {

/// Y = mean(X) + scale(X) * eps with eps ~ N(0, 1). `signals` lists the
/// covariates (0-based) entering mean or scale.
struct GenerativeModel {
  std::string name;
  std::function<double(std::span<const double>)> mean;
  std::function<double(std::span<const double>)> scale;
  IndexSet signals;
  std::size_t min_dimension = 1;
};

/// Built-in benchmark models 1-3 (signals X1, X6, X11). Throws
/// std::invalid_argument for any other id.
GenerativeModel builtin_model(int id);

/// Y independent of X: mean 0, scale 1, no signals.
GenerativeModel null_model();

struct SimulationConfig {
  int model = 1;
  std::size_t n = 1000;
  double rho = 0.0;
  std::size_t d = 25;
  std::size_t block_size = 5;
  std::size_t replications = 20;
  std::uint64_t seed = 0;
  std::optional<GenerativeModel> custom;  // overrides `model` when set

  GenerativeModel resolved_model() const;
  void validate() const;
};

/// n rows of N(0, Sigma) with unit variances, correlation rho inside
/// consecutive blocks of `block_size` columns and 0 across blocks:
/// X_ij = sqrt(rho) W_{i,block(j)} + sqrt(1 - rho) xi_ij. Returned as d
/// columns.
std::vector<std::vector<double>> sample_block_mvn(std::size_t n, std::size_t d, double rho, std::uint64_t seed,
                                                  std::size_t block_size = 5);

struct SimulatedData {
  Dataset data;
  IndexSet signals;
};

/// Covariates from sample_block_mvn(seed'), noise from a second stream;
/// columns are named X1..Xd and the response y.
SimulatedData simulate_model(const SimulationConfig& config);

enum class Method { kForwardCrps, kBackMse, kNgrBic };
std::string to_string(Method method);
Method parse_method(const std::string& name);

struct MethodSettings {
  RunConfig forward;  // forward_crps; seed is replaced per replication
  BackwardOptions backward;
  NgrOptions ngr;
};

struct ReplicationResult {
  std::size_t replication = 0;
  std::uint64_t data_seed = 0;
  std::uint64_t method_seed = 0;
  IndexSet selected;
  std::size_t signal = 0;
  std::size_t noise = 0;
};

struct ExperimentSummary {
  Method method = Method::kForwardCrps;
  SimulationConfig config;
  std::vector<ReplicationResult> rows;
  double mean_signal = 0.0;
  double mean_noise = 0.0;
  std::vector<double> selection_frequency;  // per covariate
  IndexSet signals;
};

/// Seeds for replication r: data derive_seed(seed, {r, 0}), method
/// derive_seed(seed, {r, 1}); two methods run with the same config see the
/// same data sets. Replications run on `threads` workers.
ExperimentSummary run_experiment(const SimulationConfig& config, Method method, const MethodSettings& settings,
                                 std::size_t threads = 1);

/// Selected set of a single method run (used by run_experiment and the CLI).
IndexSet run_method(const Dataset& data, Method method, const MethodSettings& settings, std::uint64_t seed);

}  // namespace qrfsel
