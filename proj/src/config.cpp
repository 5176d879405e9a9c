#include "qrfsel/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "qrfsel/dataset.hpp"

namespace qrfsel {

std::size_t ForestParams::resolved_mtry(std::size_t covariates) const {
  if (mtry == 0 || mtry > covariates) return covariates;
  return mtry;
}

void ForestParams::validate() const {
  if (trees < 1) throw ConfigError("trees must be >= 1");
  if (!(subsample_fraction > 0.0 && subsample_fraction <= 1.0))
    throw ConfigError("subsample_fraction must be in (0, 1]");
  if (min_node_size < 1) throw ConfigError("min_node_size must be >= 1");
  for (std::size_t k = 0; k < split_levels.size(); ++k) {
    if (!(split_levels[k] > 0.0 && split_levels[k] < 1.0)) throw ConfigError("split quantiles must lie in (0, 1)");
    if (k > 0 && !(split_levels[k] > split_levels[k - 1]))
      throw ConfigError("split quantiles must be strictly increasing");
  }
}

void RunConfig::validate() const {
  forest.validate();
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("alpha must be in (0, 1)");
  if (crps_grid_k < 1) throw ConfigError("crps_grid_k must be >= 1");
  if (threads < 1) throw ConfigError("threads must be >= 1");
}

namespace {

std::string trim(std::string s) {
  auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size())
    throw ConfigError("invalid value '" + text + "' for key '" + key + "'");
  return value;
}

}  // namespace

void apply_config_value(RunConfig& config, const std::string& key, const std::string& raw) {
  const auto value = trim(raw);
  if (key == "trees") {
    config.forest.trees = parse_number<std::size_t>(key, value);
  } else if (key == "subsample_fraction") {
    config.forest.subsample_fraction = parse_number<double>(key, value);
  } else if (key == "mtry") {
    config.forest.mtry = parse_number<std::size_t>(key, value);
  } else if (key == "min_node_size") {
    config.forest.min_node_size = parse_number<std::size_t>(key, value);
  } else if (key == "split_quantiles") {
    std::vector<double> levels;
    std::istringstream in(value);
    std::string item;
    while (std::getline(in, item, ',')) {
      item = trim(item);
      if (!item.empty()) levels.push_back(parse_number<double>(key, item));
    }
    config.forest.split_levels = std::move(levels);
  } else if (key == "crps_grid_k") {
    config.crps_grid_k = parse_number<std::size_t>(key, value);
  } else if (key == "alpha") {
    config.alpha = parse_number<double>(key, value);
  } else if (key == "seed") {
    config.seed = parse_number<std::uint64_t>(key, value);
  } else if (key == "threads") {
    config.threads = parse_number<std::size_t>(key, value);
  } else {
    throw ConfigError("unknown configuration key '" + key + "'");
  }
}

RunConfig parse_config(const std::string& text, RunConfig base) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    apply_config_value(base, trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  base.validate();
  return base;
}

RunConfig load_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw MissingFileError("cannot open config file '" + path.string() + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), std::move(base));
}

std::map<std::string, std::string> config_entries(const RunConfig& config) {
  std::map<std::string, std::string> out;
  out["trees"] = std::to_string(config.forest.trees);
  out["subsample_fraction"] = format_double(config.forest.subsample_fraction);
  out["mtry"] = std::to_string(config.forest.mtry);
  out["min_node_size"] = std::to_string(config.forest.min_node_size);
  std::string levels;
  for (std::size_t k = 0; k < config.forest.split_levels.size(); ++k) {
    if (k) levels += ',';
    levels += format_double(config.forest.split_levels[k]);
  }
  out["split_quantiles"] = levels;
  out["crps_grid_k"] = std::to_string(config.crps_grid_k);
  out["alpha"] = format_double(config.alpha);
  if (config.seed) out["seed"] = std::to_string(*config.seed);
  return out;
}

}  // namespace qrfsel
