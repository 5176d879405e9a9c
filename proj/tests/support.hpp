#pragma once

#include <unistd.h>

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <string>
#include <vector>

#include "qrfsel/dataset.hpp"
#include "qrfsel/quantile_forest.hpp"
#include "qrfsel/random.hpp"

namespace testing {

// Scratch directory unique to this process, removed at exit.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("qrfsel_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::filesystem::path file(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::vector<std::string> default_names(std::size_t d) {
  std::vector<std::string> names;
  for (std::size_t j = 0; j < d; ++j) names.push_back("X" + std::to_string(j + 1));
  return names;
}

// Dataset from explicit columns.
inline qrfsel::Dataset make_data(std::vector<double> y, std::vector<std::vector<double>> columns) {
  const auto d = columns.size();
  return qrfsel::Dataset(std::move(y), std::move(columns), default_names(d));
}

// Independent standard normal covariates; y = f(row) + noise_sd * eps.
template <typename F>
qrfsel::Dataset gaussian_data(std::size_t n, std::size_t d, std::uint64_t seed, F mean, double noise_sd = 1.0) {
  qrfsel::Rng rng(seed);
  std::vector<std::vector<double>> columns(d, std::vector<double>(n));
  std::vector<double> y(n), row(d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) row[j] = columns[j][i] = rng.normal();
    y[i] = mean(row) + noise_sd * rng.normal();
  }
  return make_data(std::move(y), std::move(columns));
}

// Hand-built forest description. Trees use single-covariate splits on the
// forest's own covariate slots.
struct TreeLayout {
  std::vector<std::size_t> structure;
  std::vector<std::size_t> estimation;
  std::vector<int> slot;
  std::vector<double> threshold;
  std::vector<unsigned> left, right, leaf;
  std::vector<std::vector<std::size_t>> leaves;
};

// Single-leaf tree over the given halves.
inline TreeLayout stump(std::vector<std::size_t> structure, std::vector<std::size_t> estimation) {
  TreeLayout t;
  t.structure = std::move(structure);
  t.estimation = estimation;
  t.slot = {-1};
  t.threshold = {0.0};
  t.left = {0};
  t.right = {0};
  t.leaf = {0};
  t.leaves = {estimation};
  return t;
}

// One split on slot 0 at `threshold`; leaves assigned from the estimation rows.
inline TreeLayout one_split(std::vector<std::size_t> structure, std::vector<std::size_t> estimation, double threshold,
                          const std::vector<double>& x) {
  TreeLayout t;
  t.structure = std::move(structure);
  t.estimation = estimation;
  t.slot = {0, -1, -1};
  t.threshold = {threshold, 0.0, 0.0};
  t.left = {1, 0, 0};
  t.right = {2, 0, 0};
  t.leaf = {0, 0, 1};
  t.leaves = {{}, {}};
  for (auto i : estimation) t.leaves[x[i] <= threshold ? 0 : 1].push_back(i);
  return t;
}

// Loads a forest over one covariate with values x and responses y through
// the public file format, so the loader's invariant checks apply.
inline qrfsel::QuantileForest load_forest(const std::vector<double>& y, const std::vector<double>& x,
                                          const std::vector<TreeLayout>& trees, std::size_t min_node_size = 1) {
  nlohmann::json doc;
  doc["format"] = "qrfsel-forest";
  doc["version"] = 1;
  doc["seed"] = 0;
  doc["dimension"] = 1;
  doc["covariates"] = {0};
  doc["params"] = {{"trees", trees.size()},
                   {"subsample_fraction", 1.0},
                   {"mtry", 0},
                   {"min_node_size", min_node_size},
                   {"split_levels", {0.5}}};
  doc["responses"] = y;
  doc["covariate_rows"] = x;
  doc["trees"] = nlohmann::json::array();
  for (const auto& t : trees) {
    doc["trees"].push_back({{"structure", t.structure},
                            {"estimation", t.estimation},
                            {"slot", t.slot},
                            {"threshold", t.threshold},
                            {"left", t.left},
                            {"right", t.right},
                            {"leaf", t.leaf},
                            {"leaves", t.leaves}});
  }
  TempDir dir;
  const auto path = dir.file("forest.json");
  write_text(path, doc.dump());
  return qrfsel::QuantileForest::load(path);
}

}  // namespace testing
