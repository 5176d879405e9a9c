#include "qrfsel/forward_selection.hpp"

#include <cmath>
#include <stdexcept>

#include "qrfsel/parallel.hpp"
#include "qrfsel/quantile_forest.hpp"
#include "qrfsel/random.hpp"

namespace qrfsel {

std::size_t RiskTable::excluded() const {
  std::size_t total = 0;
  for (const auto& [q, e] : entries) total += e.excluded;
  return total;
}

RiskEstimate estimate_risk(const Dataset& data, const IndexSet& covariates, const ForestParams& params,
                           const QuantileGrid& grid, std::uint64_t seed, std::size_t threads) {
  const auto forest = QuantileForest::fit(data, covariates, params, seed, threads);
  const auto predictions = forest.oob_predict_all(grid, threads);
  RiskEstimate out;
  double sum = 0.0;
  for (std::size_t i = 0; i < data.n(); ++i) {
    if (!predictions[i]) {
      ++out.excluded;
      continue;
    }
    sum += crps_from_quantiles(data.y(i), *predictions[i]);
    ++out.used;
  }
  if (out.used == 0)
    throw std::runtime_error("no observation has an out-of-bag sub-forest; increase trees or lower subsample_fraction");
  out.risk = sum / static_cast<double>(out.used);
  return out;
}

ForwardStep forward_step(const Dataset& data, const IndexSet& base, const ForestParams& params,
                         const QuantileGrid& grid, std::uint64_t seed, std::size_t threads) {
  base.validate(data.d());
  const auto candidates = complement(base, data.d());
  if (candidates.empty()) throw std::invalid_argument("forward step on a full covariate set");

  std::vector<RiskEstimate> risks(candidates.size());
  parallel_for(candidates.size(), threads, [&](std::size_t c) {
    const auto q = candidates[c];
    risks[c] = estimate_risk(data, base.with(q), params, grid, derive_seed(seed, {q}), 1);
  });

  ForwardStep out{candidates[0], RiskTable{base, {}}};
  double best = risks[0].risk;
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    out.table.entries.emplace(candidates[c], risks[c]);
    if (risks[c].risk < best) {
      best = risks[c].risk;
      out.chosen = candidates[c];
    }
  }
  return out;
}

TestStatistic test_statistic(const RiskTable& prev, const RiskTable& cur) {
  if (cur.base.size() != prev.base.size() + 1)
    throw std::invalid_argument("test_statistic: current base must extend the previous base by one index");
  for (auto i : prev.base)
    if (!cur.base.contains(i)) throw std::invalid_argument("test_statistic: base sets are not nested");
  for (auto i : cur.base)
    if (!prev.base.contains(i) && !prev.entries.contains(i))
      throw std::invalid_argument("test_statistic: the added index was not a candidate of the previous table");
  TestStatistic out;
  for (const auto& [q, entry] : cur.entries) {
    auto it = prev.entries.find(q);
    if (it == prev.entries.end()) throw std::invalid_argument("test_statistic: candidate missing from previous table");
    ++out.m;
    if (it->second.risk - entry.risk > 0.0) ++out.w;
  }
  return out;
}

double binomial_half_cdf(std::size_t c, std::size_t m) {
  if (c >= m) return 1.0;
  // pmf(i+1) = pmf(i) * (m - i) / (i + 1), starting at 2^-m.
  long double pmf = std::ldexp(1.0L, -static_cast<int>(m));
  long double cdf = pmf;
  for (std::size_t i = 0; i < c; ++i) {
    pmf = pmf * static_cast<long double>(m - i) / static_cast<long double>(i + 1);
    cdf += pmf;
  }
  return static_cast<double>(cdf);
}

std::size_t binomial_critical(std::size_t m, double alpha) {
  if (m < 1) throw std::invalid_argument("binomial_critical needs M >= 1");
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("binomial_critical needs alpha in (0, 1)");
  const long double target = 1.0L - static_cast<long double>(alpha);
  long double pmf = std::ldexp(1.0L, -static_cast<int>(m));
  long double cdf = pmf;
  for (std::size_t c = 0; c < m; ++c) {
    if (cdf >= target - 1e-15L) return c;
    pmf = pmf * static_cast<long double>(m - c) / static_cast<long double>(c + 1);
    cdf += pmf;
  }
  return m;
}

SelectionTrace select(const Dataset& data, const RunConfig& config, const StepCallback& on_step) {
  config.validate();
  if (!config.seed) throw ConfigError("select needs a seed");
  const std::uint64_t master = *config.seed;
  const QuantileGrid grid(config.crps_grid_k);
  const std::size_t d = data.d();

  SelectionTrace trace;
  trace.alpha = config.alpha;
  trace.config = config;

  auto run_step = [&](std::size_t step, const IndexSet& base) {
    auto result = forward_step(data, base, config.forest, grid, derive_seed(master, {step}), config.threads);
    trace.forests_fitted += result.table.entries.size();
    return result;
  };

  // A record can still change (degenerate stop) until the next one exists.
  std::size_t reported = 0;
  auto report = [&](std::size_t final_count) {
    for (; reported < final_count; ++reported)
      if (on_step) on_step(trace.steps[reported]);
  };

  auto first = run_step(1, IndexSet{});
  StepRecord record;
  record.step = 1;
  record.base = IndexSet{};
  record.table = first.table;
  record.chosen = first.chosen;
  trace.steps.push_back(record);

  IndexSet accepted;                                 // J_{j-1}: the last state whose additions all passed
  IndexSet current = IndexSet{}.with(first.chosen);  // J_j
  RiskTable previous = std::move(first.table);

  for (std::size_t step = 2;; ++step) {
    if (current.size() == d) {
      // Nothing left to add and nothing to compare against: the last
      // addition cannot be tested. Stop with the full set.
      auto& last = trace.steps.back();
      last.decision = Decision::kStop;
      last.degenerate = true;
      trace.selected = current;
      break;
    }
    auto next = run_step(step, current);
    const auto stat = test_statistic(previous, next.table);
    const auto critical = binomial_critical(stat.m, config.alpha);

    StepRecord rec;
    rec.step = step;
    rec.base = current;
    rec.table = next.table;
    rec.chosen = next.chosen;
    rec.tested = current.items().back();
    rec.w = stat.w;
    rec.m = stat.m;
    rec.critical = critical;
    rec.degenerate = critical >= stat.m;
    if (stat.w > critical) {
      rec.decision = Decision::kContinue;
      trace.steps.push_back(std::move(rec));
      report(trace.steps.size() - 1);
      accepted = current;
      current = current.with(next.chosen);
      previous = std::move(next.table);
    } else {
      rec.decision = Decision::kStop;
      trace.steps.push_back(std::move(rec));
      trace.selected = accepted;
      break;
    }
  }
  report(trace.steps.size());
  return trace;
}

}  // namespace qrfsel
