// Acceptance checks. `qrfsel_acceptance N` runs check N and prints one
// "criterion N: PASS|FAIL ..." line; the exit status is 0 only on PASS.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "qrfsel/forward_selection.hpp"
#include "qrfsel/quantile_forest.hpp"
#include "qrfsel/random.hpp"
#include "qrfsel/report.hpp"
#include "qrfsel/scoring.hpp"
#include "qrfsel/simulation.hpp"
#include "support.hpp"

using namespace qrfsel;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(6);
  s << v;
  return s.str();
}

// Quantile form on a 2000-level grid against the step-CDF form, for samples
// of size 2..50 (a single point has range 0 and would demand exact equality).
Outcome crps_dual_form() {
  constexpr std::size_t k = 2000;
  const QuantileGrid grid(k);
  Rng rng(1001);
  double worst_ratio = 0.0, worst_oracle = 0.0;
  for (int rep = 0; rep < 200; ++rep) {
    const std::size_t m = 2 + rng.below(49);
    std::vector<double> sample(m);
    for (auto& v : sample) v = rng.normal() * (0.1 + 5.0 * rng.uniform());
    const auto [lo, hi] = std::minmax_element(sample.begin(), sample.end());
    const double range = *hi - *lo;
    const double y = *lo - 0.5 * range + 2.0 * range * rng.uniform();

    const auto cdf = StepCDF::empirical(sample);
    std::vector<double> q(k);
    for (std::size_t t = 0; t < k; ++t) q[t] = cdf.quantile(grid[t]);
    const double quantile_form = crps_from_quantiles(y, q);
    const double cdf_form = crps_cdf_form(y, cdf);
    worst_ratio = std::max(worst_ratio, std::abs(quantile_form - cdf_form) / (5.0 * range / k));
    worst_oracle = std::max(worst_oracle, std::abs(cdf_form - oracle::crps_ecdf_energy(sample, y)));
  }
  return {worst_ratio <= 1.0 && worst_oracle <= 1e-9,
          "max |QS - CDF| / (5 range / k) = " + fmt(worst_ratio) + ", max |CDF - energy| = " + fmt(worst_oracle)};
}

Outcome weighted_quantile_oracle() {
  Rng rng(1002);
  int mismatches = 0;
  for (int rep = 0; rep < 1000; ++rep) {
    const std::size_t m = 1 + rng.below(40);
    std::vector<double> v(m), w(m);
    for (std::size_t i = 0; i < m; ++i) {
      v[i] = std::round(rng.normal() * 4.0);  // rounding creates ties
      w[i] = rng.uniform() < 0.2 ? 0.0 : rng.uniform();
    }
    w[rng.below(m)] += 0.1;
    const double tau = rng.uniform();
    mismatches += weighted_quantile(v, w, tau) != oracle::weighted_pinball_argmin(v, w, tau);
  }
  return {mismatches == 0, std::to_string(mismatches) + " mismatches in 1000 instances"};
}

Outcome binomial_critical_values() {
  int mismatches = 0;
  for (unsigned m = 1; m <= 64; ++m)
    for (std::uint64_t num : {1, 5, 10})
      mismatches +=
          binomial_critical(m, static_cast<double>(num) / 100.0) != oracle::binomial_critical_exact(m, num, 100);
  const auto c20 = binomial_critical(20, 0.05);
  return {mismatches == 0 && c20 == 14,
          std::to_string(mismatches) + " mismatches over M <= 64, C(20, 0.05) = " + std::to_string(c20)};
}

// Honesty, sub-forest bookkeeping and a hand-computed OOB prediction on a
// range of fitted forests, then the mean sub-forest size at B = 2000.
Outcome honesty_and_oob() {
  std::string failure;
  auto fail = [&](const std::string& why) {
    if (failure.empty()) failure = why;
  };
  const QuantileGrid grid(9);
  for (std::uint64_t rep = 0; rep < 12; ++rep) {
    const std::size_t n = 30 + 17 * rep, d = 1 + rep % 4;
    const auto data = testing::gaussian_data(n, d, derive_seed(1003, {rep}), [](auto& r) { return r[0]; });
    ForestParams p;
    p.trees = 40;
    p.subsample_fraction = 0.3 + 0.05 * static_cast<double>(rep % 8);
    p.min_node_size = 1 + rep % 3;
    const IndexSet cov = complement(IndexSet{}, d);
    const auto forest = QuantileForest::fit(data, cov, p, derive_seed(1004, {rep}));
    try {
      forest.validate();
    } catch (const std::exception& e) {
      fail(std::string("validate: ") + e.what());
    }
    const auto& trees = forest.trees();
    for (std::size_t b = 0; b < trees.size(); ++b) {
      auto s = trees[b].structure, e = trees[b].estimation;
      std::sort(s.begin(), s.end());
      std::sort(e.begin(), e.end());
      std::vector<std::size_t> both;
      std::set_intersection(s.begin(), s.end(), e.begin(), e.end(), std::back_inserter(both));
      if (!both.empty()) fail("structure and estimation rows overlap");
      for (const auto& leaf : trees[b].leaves)
        for (auto j : leaf)
          if (!std::binary_search(e.begin(), e.end(), j)) fail("leaf holds a non-estimation row");
    }
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> w(n, 0.0);
      std::size_t oob = 0;
      std::vector<double> local;
      for (auto j : cov.sorted()) local.push_back(data.x(i, j));
      for (std::size_t b = 0; b < trees.size(); ++b) {
        const bool in =
            std::find(trees[b].structure.begin(), trees[b].structure.end(), i) != trees[b].structure.end() ||
            std::find(trees[b].estimation.begin(), trees[b].estimation.end(), i) != trees[b].estimation.end();
        if (in != forest.in_bag(b, i)) fail("in-bag flag disagrees with the subsample");
        if (in) continue;
        ++oob;
        const auto& leaf = trees[b].leaves[trees[b].leaf_of(local)];
        for (auto j : leaf) {
          if (j == i) fail("sub-forest uses the target observation");
          w[j] += 1.0 / static_cast<double>(leaf.size());
        }
      }
      if (oob != forest.oob_tree_count(i)) fail("OOB tree count");
      const auto got = forest.oob_predict_quantiles(i, grid);
      const bool any = std::any_of(w.begin(), w.end(), [](double v) { return v > 0.0; });
      if (got.has_value() != any) {
        fail("OOB prediction availability");
        continue;
      }
      if (!any) continue;
      for (std::size_t t = 0; t < grid.k(); ++t)
        if ((*got)[t] != oracle::weighted_pinball_argmin(
                             std::vector<double>(data.response().begin(), data.response().end()), w, grid[t]))
          fail("OOB quantile differs from the hand-computed sub-forest");
    }
  }

  const auto data = testing::gaussian_data(200, 2, 1005, [](auto& r) { return r[0]; });
  ForestParams p;
  p.trees = 2000;
  const auto forest = QuantileForest::fit(data, IndexSet{0, 1}, p, 1006);
  double total = 0.0;
  for (std::size_t i = 0; i < data.n(); ++i) total += static_cast<double>(forest.oob_tree_count(i));
  const double mean = total / static_cast<double>(data.n());
  const double expected = 2000.0 * (1.0 - p.subsample_fraction);
  if (std::abs(mean - expected) > 0.05 * expected) fail("mean sub-forest size " + fmt(mean));
  return {failure.empty(), (failure.empty() ? "12 forests checked" : failure) + ", mean sub-forest size " + fmt(mean) +
                               " vs " + fmt(expected)};
}

MethodSettings reduced_settings() {
  MethodSettings s;
  s.forward.forest.trees = 200;
  s.backward.forest.trees = 200;
  s.backward.replicates = 5;
  return s;
}

Outcome type_one_control() {
  SimulationConfig c;
  c.custom = null_model();
  c.d = 5;
  c.n = 500;
  c.replications = 100;
  c.seed = 1007;
  const auto summary = run_experiment(c, Method::kForwardCrps, reduced_settings());
  const auto empty =
      std::count_if(summary.rows.begin(), summary.rows.end(), [](auto& r) { return r.selected.empty(); });
  return {empty >= 85, "empty set in " + std::to_string(empty) + " of 100"};
}

Outcome signal_recovery() {
  SimulationConfig c;
  c.model = 1;
  c.n = 1000;
  c.rho = 0.0;
  c.replications = 20;
  c.seed = 1008;
  const auto s = run_experiment(c, Method::kForwardCrps, reduced_settings());
  return {s.mean_signal >= 2.0 && s.mean_noise < 1.0,
          "mean signal " + fmt(s.mean_signal) + " of 3, mean noise " + fmt(s.mean_noise)};
}

Outcome paired_false_positives() {
  SimulationConfig c;
  c.model = 1;
  c.n = 1000;
  c.rho = 0.4;
  c.replications = 20;
  c.seed = 1009;
  const auto fwd = run_experiment(c, Method::kForwardCrps, reduced_settings());
  const auto back = run_experiment(c, Method::kBackMse, reduced_settings());
  return {back.mean_noise > fwd.mean_noise,
          "mean noise backMSE " + fmt(back.mean_noise) + " vs forward " + fmt(fwd.mean_noise)};
}

Outcome heteroskedastic_sensitivity() {
  SimulationConfig c;
  c.model = 2;
  c.n = 2500;
  c.rho = 0.0;
  c.replications = 20;
  c.seed = 1010;
  auto scale_hits = [](const ExperimentSummary& s) {
    return std::count_if(s.rows.begin(), s.rows.end(),
                         [](auto& r) { return r.selected.contains(5) || r.selected.contains(10); });
  };
  const auto fwd = scale_hits(run_experiment(c, Method::kForwardCrps, reduced_settings()));
  const auto back = scale_hits(run_experiment(c, Method::kBackMse, reduced_settings()));
  return {fwd >= 12 && back < fwd,
          "X6 or X11 selected: forward " + std::to_string(fwd) + " of 20, backMSE " + std::to_string(back) + " of 20"};
}

// Y = 1 + 2 X1 - X3 + eps with five covariates; the true support is {X1, X3}.
Outcome ngr_sanity() {
  const std::vector<double> truth{1.0, 2.0, -1.0};
  int covered = 0, exact = 0;
  for (std::uint64_t rep = 0; rep < 100; ++rep) {
    const auto data = testing::gaussian_data(5000, 5, derive_seed(1011, {rep}),
                                             [&](auto& r) { return truth[0] + truth[1] * r[0] + truth[2] * r[2]; });
    const auto m = ngr_fit(data, IndexSet{0, 2});
    bool all = true;
    for (Eigen::Index t = 0; t < m.beta.size(); ++t)
      all = all && std::abs(m.beta(t) - truth[static_cast<std::size_t>(t)]) <= 3.0 * m.beta_se(t);
    covered += all;
    exact += ngr_bic_stepwise(data).model.covariates.same_elements(IndexSet{0, 2});
  }
  return {covered >= 95 && exact >= 80, "beta within 3 SE in " + std::to_string(covered) +
                                            " of 100, exact support in " + std::to_string(exact) + " of 100"};
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

// Runs the CLI twice with one thread and once with two; the traces must
// agree byte for byte once the runtime block (threads, wall clock) is removed.
Outcome cli_determinism() {
#ifndef QRFSEL_CLI_PATH
  return {false, "built without the command-line tool"};
#else
  testing::TempDir dir;
  SimulationConfig c;
  c.model = 1;
  c.n = 400;
  c.seed = 1012;
  write_csv(simulate_model(c).data, dir.file("data.csv"));
  std::vector<std::string> traces, outputs;
  for (const auto& [run, threads] : std::vector<std::pair<std::string, int>>{{"a", 1}, {"b", 1}, {"c", 2}}) {
    const auto trace = dir.file(run + ".json"), out = dir.file(run + ".out");
    const std::string cmd = std::string("\"") + QRFSEL_CLI_PATH + "\" select --data \"" +
                            dir.file("data.csv").string() + "\" --seed 42 --trees 100 --threads " +
                            std::to_string(threads) + " --out \"" + trace.string() + "\" > \"" + out.string() +
                            "\" 2>&1";
    if (std::system(cmd.c_str()) != 0) return {false, "select run " + run + " failed"};
    traces.push_back(dump_report(strip_runtime(nlohmann::json::parse(slurp(trace)))));
    outputs.push_back(slurp(out));
  }
  const bool same =
      traces[0] == traces[1] && traces[0] == traces[2] && outputs[0] == outputs[1] && outputs[0] == outputs[2];
  return {same, same ? "three traces identical (" + std::to_string(traces[0].size()) + " bytes)" : "traces differ"};
#endif
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::function<Outcome()>> checks{
      crps_dual_form,  weighted_quantile_oracle, binomial_critical_values,    honesty_and_oob, type_one_control,
      signal_recovery, paired_false_positives,   heteroskedastic_sensitivity, ngr_sanity,      cli_determinism};
  std::vector<std::size_t> run;
  for (int a = 1; a < argc; ++a) run.push_back(std::stoul(argv[a]));
  if (run.empty())
    for (std::size_t c = 1; c <= checks.size(); ++c) run.push_back(c);

  bool all = true;
  for (auto c : run) {
    if (c < 1 || c > checks.size()) {
      std::cerr << "no criterion " << c << "\n";
      return 2;
    }
    Outcome o;
    try {
      o = checks[c - 1]();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::cout << "criterion " << c << ": " << (o.pass ? "PASS" : "FAIL") << " (" << o.detail << ")" << std::endl;
    all = all && o.pass;
  }
  return all ? 0 : 1;
}
