#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace qrfsel {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Honest quantile forest settings. Defaults are the selection-time values:
/// 1000 trees, half-subsamples, every covariate a split candidate, leaves
/// down to one structure observation.
struct ForestParams {
  std::size_t trees = 1000;
  double subsample_fraction = 0.5;
  std::size_t mtry = 0;  // 0 = all covariates of the fitted set
  std::size_t min_node_size = 1;
  std::vector<double> split_levels{0.25, 0.5, 0.75};

  /// mtry resolved against a covariate count.
  std::size_t resolved_mtry(std::size_t covariates) const;
  /// Throws ConfigError on a violated invariant.
  void validate() const;
};

struct RunConfig {
  ForestParams forest;
  double alpha = 0.05;
  std::size_t crps_grid_k = 50;
  std::optional<std::uint64_t> seed;
  std::size_t threads = 1;

  void validate() const;
};

/// Parses `key = value` lines ('#' starts a comment). Recognised keys:
/// trees, subsample_fraction, mtry, min_node_size, split_quantiles,
/// crps_grid_k, alpha, seed, threads. Unknown keys are an error.
RunConfig parse_config(const std::string& text, RunConfig base = {});
RunConfig load_config(const std::filesystem::path& path, RunConfig base = {});

/// Applies a single key/value pair; shared by file parsing and CLI overrides.
void apply_config_value(RunConfig& config, const std::string& key, const std::string& value);

/// Flat key -> value rendering of the resolved configuration.
std::map<std::string, std::string> config_entries(const RunConfig& config);

}  // namespace qrfsel
