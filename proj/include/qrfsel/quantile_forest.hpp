#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "qrfsel/config.hpp"
#include "qrfsel/dataset.hpp"
#include "qrfsel/scoring.hpp"

namespace qrfsel {

/// Per-observation forest weights, w_i >= 0, summing to at most 1.
struct WeightVector {
  std::vector<double> w;

  double sum() const;
  std::size_t size() const { return w.size(); }
  double operator[](std::size_t i) const { return w[i]; }
};

/// Class labels for the multi-quantile split surrogate: Z_i counts the node
/// quantiles (left-continuous, computed from `node_responses`) lying at or
/// above Y_i, so Z_i is in {0, ..., K}.
std::vector<std::uint32_t> relabel(std::span<const double> node_responses, std::span<const double> split_levels);

struct SplitChoice {
  std::size_t feature;  // dataset column
  double threshold;     // go left iff x <= threshold
  double score;         // value of the multi-class criterion
};

/// Maximises sum_k n_{C1,k}^2 / n_{C1} + sum_k n_{C2,k}^2 / n_{C2} over
/// midpoints between consecutive distinct values of each candidate feature,
/// with both children holding at least `min_node_size` rows. Returns nothing
/// when no admissible split improves on the unsplit node. Ties go to the
/// lowest feature index, then the smallest threshold.
std::optional<SplitChoice> best_split(const Dataset& data, std::span<const std::size_t> rows,
                                      std::span<const std::uint32_t> labels, const IndexSet& candidates,
                                      std::size_t min_node_size);

/// Smallest value whose cumulative normalised weight (values sorted
/// ascending) reaches tau. Minimises sum_i w_i * pinball(v_i - theta, tau).
double weighted_quantile(std::span<const double> values, std::span<const double> weights, double tau);

/// One honest tree. Node features are positions in the forest's covariate
/// set; leaves hold estimation-sample indices only.
struct Tree {
  struct Node {
    std::int32_t slot = -1;  // -1 marks a leaf
    double threshold = 0.0;
    std::uint32_t left = 0;
    std::uint32_t right = 0;
    std::uint32_t leaf = 0;
  };

  std::vector<std::size_t> structure;   // I: drives splits
  std::vector<std::size_t> estimation;  // J: populates leaves
  std::vector<Node> nodes;
  std::vector<std::vector<std::size_t>> leaves;

  bool is_leaf(std::size_t node) const { return nodes[node].slot < 0; }

  /// Leaf index reached by a row given in forest-local covariate order.
  template <typename Row>
  std::size_t leaf_of(const Row& local) const {
    std::size_t node = 0;
    while (nodes[node].slot >= 0) {
      const auto& nd = nodes[node];
      node = local[static_cast<std::size_t>(nd.slot)] <= nd.threshold ? nd.left : nd.right;
    }
    return nodes[node].leaf;
  }
};

class QuantileForest {
 public:
  /// Grows params.trees honest trees on the columns in `covariates`.
  /// Trees are independent given their seed, so the result does not depend
  /// on `threads`.
  static QuantileForest fit(const Dataset& data, const IndexSet& covariates, const ForestParams& params,
                            std::uint64_t seed, std::size_t threads = 1);

  const std::vector<Tree>& trees() const { return trees_; }
  const ForestParams& params() const { return params_; }
  const IndexSet& covariates() const { return covariates_; }
  std::uint64_t seed() const { return seed_; }
  std::size_t n() const { return responses_.size(); }
  std::size_t dimension() const { return dimension_; }

  /// Forest weights at a covariate vector of the full dataset dimension.
  WeightVector weights(std::span<const double> x) const;

  /// Weighted quantiles at every grid level; nondecreasing. Throws when no
  /// tree has a populated leaf at x.
  std::vector<double> predict_quantiles(std::span<const double> x, const QuantileGrid& grid) const;
  std::vector<double> predict_quantiles(std::span<const double> x, std::span<const double> levels) const;

  /// Predictive distribution at x as a step CDF over estimation responses.
  StepCDF predict_distribution(std::span<const double> x) const;

  /// Quantiles for training observation i from the trees whose subsample
  /// excludes i; nothing when there is no such tree or all of their leaves
  /// at X_i are empty.
  std::optional<std::vector<double>> oob_predict_quantiles(std::size_t i, const QuantileGrid& grid) const;

  /// Out-of-bag quantiles for every training observation.
  std::vector<std::optional<std::vector<double>>> oob_predict_all(const QuantileGrid& grid,
                                                                  std::size_t threads = 1) const;

  /// Number of trees whose subsample excludes observation i.
  std::size_t oob_tree_count(std::size_t i) const;
  bool in_bag(std::size_t tree, std::size_t i) const { return inbag_[tree][i] != 0; }

  /// Checks honesty and bookkeeping invariants; throws std::logic_error.
  void validate() const;

  void save(const std::filesystem::path& path) const;
  static QuantileForest load(const std::filesystem::path& path);

 private:
  std::vector<double> local_row(std::span<const double> x) const;
  std::optional<std::vector<double>> quantiles_from_trees(std::span<const double> local,
                                                          std::span<const std::size_t> tree_ids,
                                                          std::span<const double> levels) const;
  void rebuild_lookup();

  std::vector<Tree> trees_;
  ForestParams params_;
  IndexSet covariates_;
  std::uint64_t seed_ = 0;
  std::size_t dimension_ = 0;
  std::vector<double> responses_;
  std::vector<double> local_x_;  // n x |covariates|, row-major
  std::vector<std::vector<char>> inbag_;
  std::vector<std::size_t> response_rank_;  // position of each response in ascending order
  std::vector<double> sorted_responses_;
};

}  // namespace qrfsel
