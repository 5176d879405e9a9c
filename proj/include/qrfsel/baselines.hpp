#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "qrfsel/dataset.hpp"

namespace qrfsel {

// ---------------------------------------------------------------------------
// Breiman regression forest and backward elimination by permutation
// importance (backMSE).
// ---------------------------------------------------------------------------

struct MeanForestParams {
  std::size_t trees = 2000;
  std::size_t mtry = 0;  // 0 = ceil(|J| / 3)
  std::size_t min_leaf_size = 5;

  std::size_t resolved_mtry(std::size_t covariates) const;
};

struct MeanTree {
  struct Node {
    std::int32_t slot = -1;
    double threshold = 0.0;
    std::uint32_t left = 0;
    std::uint32_t right = 0;
    double value = 0.0;  // leaf mean
  };
  std::vector<Node> nodes;
  std::vector<std::size_t> oob;  // observations absent from the bootstrap sample

  template <typename Row>
  double predict(const Row& local) const {
    std::size_t node = 0;
    while (nodes[node].slot >= 0) {
      const auto& nd = nodes[node];
      node = local[static_cast<std::size_t>(nd.slot)] <= nd.threshold ? nd.left : nd.right;
    }
    return nodes[node].value;
  }
  bool uses_slot(std::size_t slot) const;
};

class MeanForest {
 public:
  /// Bootstrap samples of size n, variance-reduction splits over mtry random
  /// candidates per node, children of at least min_leaf_size rows.
  static MeanForest fit(const Dataset& data, const IndexSet& covariates, const MeanForestParams& params,
                        std::uint64_t seed, std::size_t threads = 1);

  const std::vector<MeanTree>& trees() const { return trees_; }
  const IndexSet& covariates() const { return covariates_; }
  const MeanForestParams& params() const { return params_; }

  /// Average of per-tree leaf means at a full-dimension covariate vector.
  double predict(std::span<const double> x) const;
  /// Mean over observations of (y_i - OOB prediction)^2, where the OOB
  /// prediction averages the trees whose bootstrap sample missed i.
  /// Observations in every bootstrap sample are skipped.
  double oob_mse(const Dataset& data) const;

 private:
  std::vector<MeanTree> trees_;
  IndexSet covariates_;
  MeanForestParams params_;
  std::size_t dimension_ = 0;
};

enum class PermutationMode { kRandom, kIdentity };

/// OOB permutation importance of dataset column j: per tree, the OOB MSE
/// with column j permuted among the tree's OOB rows minus the unpermuted OOB
/// MSE, averaged over trees with OOB rows. One fresh permutation per tree,
/// seeded by derive_seed(seed, {tree, j}).
double permutation_importance(const MeanForest& forest, const Dataset& data, std::size_t j, std::uint64_t seed,
                              PermutationMode mode = PermutationMode::kRandom);

/// Importance of every covariate of the forest, keyed by dataset column.
std::map<std::size_t, double> permutation_importances(const MeanForest& forest, const Dataset& data,
                                                      std::uint64_t seed);

struct BackwardOptions {
  MeanForestParams forest;
  std::size_t replicates = 20;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
};

struct EliminationStep {
  IndexSet covariates;
  double oob_mse = 0.0;
  std::map<std::size_t, double> importance;  // empty for the last, single-covariate step
  std::optional<std::size_t> removed;
};

struct BackwardResult {
  IndexSet selected;
  std::vector<EliminationStep> path;  // |path| = d, ending at one covariate
  double null_mse = 0.0;              // leave-one-out grand-mean predictor
  bool selected_null = false;
};

/// Leave-one-out MSE of the grand mean, the empty-set endpoint of the path.
double null_model_mse(const Dataset& data);

BackwardResult backward_select_mse(const Dataset& data, const BackwardOptions& options);

// ---------------------------------------------------------------------------
// Non-homogeneous Gaussian regression: Y ~ N(z'beta, exp(z'gamma)^2) with
// z = (1, x_J), fit by maximum likelihood.
// ---------------------------------------------------------------------------

class NgrRankError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class NgrConvergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct NgrOptions {
  double gradient_tolerance = 1e-8;  // on the per-observation mean gradient
  std::size_t max_iterations = 500;
};

struct NgrModel {
  IndexSet covariates;
  Eigen::VectorXd beta;   // intercept first
  Eigen::VectorXd gamma;  // intercept first
  Eigen::VectorXd beta_se;
  Eigen::VectorXd gamma_se;
  double log_likelihood = 0.0;
  double initial_log_likelihood = 0.0;
  double bic = 0.0;
  std::size_t iterations = 0;
  std::size_t n = 0;

  double mean(std::span<const double> x) const;
  double sigma(std::span<const double> x) const;
  std::size_t parameter_count() const { return static_cast<std::size_t>(beta.size() + gamma.size()); }
};

NgrModel ngr_fit(const Dataset& data, const IndexSet& covariates, const NgrOptions& options = {});

struct NgrStepwiseResult {
  NgrModel model;
  struct Move {
    bool add;
    std::size_t covariate;
    double bic;
  };
  std::vector<Move> moves;
};

/// Greedy BIC search from the intercept-only model: each round tries adding
/// every excluded covariate and dropping every included one (mean and scale
/// designs together) and takes the largest strict BIC decrease.
NgrStepwiseResult ngr_bic_stepwise(const Dataset& data, const NgrOptions& options = {}, std::size_t threads = 1);

}  // namespace qrfsel
