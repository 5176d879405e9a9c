#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <vector>

#include "qrfsel/config.hpp"
#include "qrfsel/dataset.hpp"
#include "qrfsel/scoring.hpp"

namespace qrfsel {

/// Out-of-bag CRPS risk of one forest.
struct RiskEstimate {
  double risk = 0.0;
  std::size_t used = 0;      // observations with a nonempty sub-forest
  std::size_t excluded = 0;  // observations without one
};

/// Estimated risks of J + {q} for every q outside the base set J.
struct RiskTable {
  IndexSet base;
  std::map<std::size_t, RiskEstimate> entries;

  double risk(std::size_t candidate) const { return entries.at(candidate).risk; }
  std::size_t excluded() const;
};

/// Fits a quantile forest on the columns J and averages the CRPS of each
/// observation's out-of-bag quantile forecast (quadrature on `grid`) over
/// observations whose sub-forest is nonempty.
RiskEstimate estimate_risk(const Dataset& data, const IndexSet& covariates, const ForestParams& params,
                           const QuantileGrid& grid, std::uint64_t seed, std::size_t threads = 1);

struct ForwardStep {
  std::size_t chosen;
  RiskTable table;
};

/// One forest per candidate q not in J; the candidate with the smallest
/// risk wins (lowest index on ties). Candidate q uses the forest seed
/// derive_seed(seed, {q}), so candidates can run in parallel.
ForwardStep forward_step(const Dataset& data, const IndexSet& base, const ForestParams& params,
                         const QuantileGrid& grid, std::uint64_t seed, std::size_t threads = 1);

struct TestStatistic {
  std::size_t w = 0;  // strict risk decreases
  std::size_t m = 0;  // common candidates
};

/// Counts candidates q, common to both tables, whose risk strictly drops
/// from prev (base J_{j-1}) to cur (base J_j = J_{j-1} + one index).
TestStatistic test_statistic(const RiskTable& prev, const RiskTable& cur);

/// P(Bin(m, 1/2) <= c).
double binomial_half_cdf(std::size_t c, std::size_t m);

/// Smallest c with P(Bin(m, 1/2) <= c) >= 1 - alpha.
std::size_t binomial_critical(std::size_t m, double alpha);

enum class Decision { kContinue, kStop };

struct StepRecord {
  std::size_t step = 0;  // 1-based
  IndexSet base;
  RiskTable table;
  std::size_t chosen = 0;
  // Test of the variable accepted at the previous step; absent at step 1.
  std::optional<std::size_t> tested;
  std::optional<std::size_t> w;
  std::size_t m = 0;
  std::optional<std::size_t> critical;
  Decision decision = Decision::kContinue;
  // The test could not reject at this step (C >= M, or nothing left to
  // compare against).
  bool degenerate = false;
};

struct SelectionTrace {
  std::vector<StepRecord> steps;
  IndexSet selected;
  double alpha = 0.05;
  RunConfig config;
  std::size_t forests_fitted = 0;
};

using StepCallback = std::function<void(const StepRecord&)>;

/// Forward selection with the binomial stopping test. Requires config.seed.
/// `on_step` sees every record as soon as it is final.
SelectionTrace select(const Dataset& data, const RunConfig& config, const StepCallback& on_step = {});

}  // namespace qrfsel
