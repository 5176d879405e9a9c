#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <vector>

#include "oracles.hpp"
#include "qrfsel/baselines.hpp"
#include "qrfsel/random.hpp"
#include "qrfsel/scoring.hpp"
#include "support.hpp"

using namespace qrfsel;

namespace {

MeanForestParams mf(std::size_t trees, std::size_t min_leaf = 5) {
  MeanForestParams p;
  p.trees = trees;
  p.min_leaf_size = min_leaf;
  return p;
}

}  // namespace

TEST_CASE("mean forest mtry default is a third of the covariates, rounded up") {
  MeanForestParams p;
  CHECK(p.resolved_mtry(1) == 1);
  CHECK(p.resolved_mtry(3) == 1);
  CHECK(p.resolved_mtry(4) == 2);
  CHECK(p.resolved_mtry(25) == 9);
  p.mtry = 4;
  CHECK(p.resolved_mtry(25) == 4);
}

TEST_CASE("mean forest on a constant response predicts the constant") {
  const auto data = testing::gaussian_data(50, 3, 1, [](auto&) { return 0.0; }, 0.0);
  std::vector<std::vector<double>> cols{std::vector<double>(data.column(0).begin(), data.column(0).end())};
  const auto constant = testing::make_data(std::vector<double>(50, 4.0), cols);
  const auto forest = MeanForest::fit(constant, IndexSet{0}, mf(20), 3);
  Rng rng(2);
  for (int k = 0; k < 20; ++k) CHECK(forest.predict(std::vector<double>{rng.normal()}) == 4.0);
}

TEST_CASE("mean forest with min leaf n predicts each tree's bootstrap mean") {
  const auto data = testing::gaussian_data(30, 2, 2, [](auto& r) { return r[0]; });
  const auto forest = MeanForest::fit(data, IndexSet{0, 1}, mf(10, 30), 4);
  for (const auto& tree : forest.trees()) {
    REQUIRE(tree.nodes.size() == 1);
    // The bootstrap sample is not stored; a mean of it lies within the range.
    CHECK(tree.nodes[0].value >= *std::min_element(data.response().begin(), data.response().end()));
    CHECK(tree.nodes[0].value <= *std::max_element(data.response().begin(), data.response().end()));
  }
  const double expected = [&] {
    double s = 0.0;
    for (const auto& t : forest.trees()) s += t.nodes[0].value;
    return s / 10.0;
  }();
  CHECK(forest.predict(std::vector<double>{0.3, -1.0}) == doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("mean forest is deterministic across thread counts") {
  const auto data = testing::gaussian_data(120, 4, 3, [](auto& r) { return r[0] - r[2]; });
  const auto a = MeanForest::fit(data, IndexSet{0, 1, 2, 3}, mf(30), 9, 1);
  const auto b = MeanForest::fit(data, IndexSet{0, 1, 2, 3}, mf(30), 9, 4);
  CHECK(a.oob_mse(data) == b.oob_mse(data));
  for (std::size_t i = 0; i < 10; ++i) CHECK(a.predict(data.row(i)) == b.predict(data.row(i)));
}

TEST_CASE("oob_mse matches a direct computation") {
  const auto data = testing::gaussian_data(80, 2, 4, [](auto& r) { return r[1]; });
  const auto forest = MeanForest::fit(data, IndexSet{0, 1}, mf(25), 5);
  std::vector<double> sum(data.n(), 0.0);
  std::vector<std::size_t> count(data.n(), 0);
  for (const auto& tree : forest.trees())
    for (auto i : tree.oob) {
      const auto row = data.row(i);
      sum[i] += tree.predict(std::vector<double>{row[0], row[1]});
      ++count[i];
    }
  double sse = 0.0;
  std::size_t used = 0;
  for (std::size_t i = 0; i < data.n(); ++i) {
    if (!count[i]) continue;
    const double e = data.y(i) - sum[i] / static_cast<double>(count[i]);
    sse += e * e;
    ++used;
  }
  CHECK(forest.oob_mse(data) == doctest::Approx(sse / static_cast<double>(used)).epsilon(1e-12));
}

TEST_CASE("permutation importance with the identity permutation is exactly zero") {
  const auto data = testing::gaussian_data(100, 3, 5, [](auto& r) { return r[0] + r[1]; });
  const auto forest = MeanForest::fit(data, IndexSet{0, 1, 2}, mf(20), 6);
  for (std::size_t j = 0; j < 3; ++j)
    CHECK(permutation_importance(forest, data, j, 1, PermutationMode::kIdentity) == 0.0);
}

TEST_CASE("a covariate no split uses has importance exactly zero") {
  // Covariate 1 is constant, so no tree can split on it.
  auto base = testing::gaussian_data(100, 1, 6, [](auto& r) { return r[0]; });
  std::vector<std::vector<double>> cols{std::vector<double>(base.column(0).begin(), base.column(0).end()),
                                        std::vector<double>(100, 1.0)};
  const auto data = testing::make_data(std::vector<double>(base.response().begin(), base.response().end()), cols);
  const auto forest = MeanForest::fit(data, IndexSet{0, 1}, mf(20), 7);
  for (const auto& t : forest.trees()) REQUIRE_FALSE(t.uses_slot(1));
  CHECK(permutation_importance(forest, data, 1, 3) == 0.0);
  CHECK(permutation_importances(forest, data, 3).at(1) == 0.0);
}

TEST_CASE("permutation importance matches a brute-force recomputation") {
  const auto data = testing::gaussian_data(60, 3, 8, [](auto& r) { return r[0] * 2 + r[2]; });
  const auto forest = MeanForest::fit(data, IndexSet{0, 1, 2}, mf(15), 11);
  const std::uint64_t seed = 99;
  for (std::size_t j = 0; j < 3; ++j) {
    double total = 0.0;
    std::size_t trees = 0;
    for (std::size_t b = 0; b < forest.trees().size(); ++b) {
      const auto& tree = forest.trees()[b];
      if (tree.oob.empty()) continue;
      ++trees;
      // One permutation of the tree's OOB rows, drawn as documented.
      std::vector<std::size_t> perm = tree.oob;
      Rng rng(derive_seed(seed, {b, j}));
      rng.shuffle(std::span<std::size_t>(perm));
      double base = 0.0, permuted = 0.0;
      for (std::size_t k = 0; k < tree.oob.size(); ++k) {
        const auto i = tree.oob[k];
        auto row = data.row(i);
        const double e0 = data.y(i) - tree.predict(row);
        row[j] = data.x(perm[k], j);
        const double e1 = data.y(i) - tree.predict(row);
        base += e0 * e0;
        permuted += e1 * e1;
      }
      total += (permuted - base) / static_cast<double>(tree.oob.size());
    }
    CHECK(permutation_importance(forest, data, j, seed) ==
          doctest::Approx(total / static_cast<double>(trees)).epsilon(1e-10));
    CHECK(permutation_importances(forest, data, seed).at(j) ==
          doctest::Approx(total / static_cast<double>(trees)).epsilon(1e-10));
  }
  CHECK_THROWS(permutation_importance(MeanForest::fit(data, IndexSet{0}, mf(2), 1), data, 2, 1));
}

TEST_CASE("null model uses the leave-one-out mean") {
  const auto data = testing::make_data({1, 2, 6}, {{0, 0, 0}});
  // LOO means 4, 3.5, 1.5 -> errors -3, -1.5, 4.5
  CHECK(null_model_mse(data) == doctest::Approx((9 + 2.25 + 20.25) / 3));
}

TEST_CASE("backward elimination path shape") {
  const auto data = testing::gaussian_data(150, 4, 9, [](auto& r) { return 2 * r[0] + r[1]; });
  BackwardOptions opt;
  opt.forest = mf(30);
  opt.replicates = 2;
  opt.seed = 4;
  const auto result = backward_select_mse(data, opt);
  REQUIRE(result.path.size() == 4);
  for (std::size_t s = 0; s < 4; ++s) {
    CHECK(result.path[s].covariates.size() == 4 - s);
    CHECK(result.path[s].removed);
    if (s + 1 < 4) {
      CHECK(result.path[s].importance.size() == 4 - s);
      CHECK_FALSE(result.path[s + 1].covariates.contains(*result.path[s].removed));
    } else {
      CHECK(result.path[s].importance.empty());
    }
  }
  bool on_path = result.selected.empty();
  for (const auto& s : result.path) on_path = on_path || s.covariates.same_elements(result.selected);
  CHECK(on_path);
  CHECK(result.selected.contains(0));

  opt.threads = 3;
  const auto again = backward_select_mse(data, opt);
  CHECK(again.selected == result.selected);
  for (std::size_t s = 0; s < 4; ++s) CHECK(again.path[s].oob_mse == result.path[s].oob_mse);
}

TEST_CASE("backward elimination with one covariate compares against the grand mean") {
  BackwardOptions opt;
  opt.forest = mf(50);
  opt.replicates = 2;
  opt.seed = 1;
  const auto signal = testing::gaussian_data(200, 1, 10, [](auto& r) { return 3 * r[0]; });
  auto result = backward_select_mse(signal, opt);
  CHECK(result.path.size() == 1);
  CHECK(result.selected == IndexSet{0});
  CHECK_FALSE(result.selected_null);

  const auto noise = testing::gaussian_data(200, 1, 11, [](auto&) { return 0.0; });
  result = backward_select_mse(noise, opt);
  CHECK(result.path.size() == 1);
  CHECK(result.selected_null == (result.null_mse <= result.path[0].oob_mse));
  CHECK(result.selected.empty() == result.selected_null);
}

TEST_CASE("NGR intercept-only fit is the Gaussian MLE") {
  const auto data = testing::gaussian_data(500, 2, 12, [](auto&) { return 1.5; }, 2.0);
  const auto model = ngr_fit(data, IndexSet{});
  const std::vector<double> y(data.response().begin(), data.response().end());
  const double m = oracle::mean(y);
  double ss = 0.0;
  for (double v : y) ss += (v - m) * (v - m);
  const double mle_sd = std::sqrt(ss / static_cast<double>(y.size()));
  CHECK(model.beta(0) == doctest::Approx(m).epsilon(1e-7));
  CHECK(std::exp(model.gamma(0)) == doctest::Approx(mle_sd).epsilon(1e-7));
  CHECK(std::abs(model.beta(0) - 1.5) <= 3 * model.beta_se(0));
  CHECK(std::abs(model.gamma(0) - std::log(2.0)) <= 3 * model.gamma_se(0));
  const double expected_ll =
      -0.5 * static_cast<double>(y.size()) * (std::log(2 * std::numbers::pi * mle_sd * mle_sd) + 1.0);
  CHECK(model.log_likelihood == doctest::Approx(expected_ll).epsilon(1e-10));
  CHECK(model.bic == doctest::Approx(-2 * model.log_likelihood + 2 * std::log(500.0)).epsilon(1e-12));
  CHECK(model.log_likelihood >= model.initial_log_likelihood);
}

TEST_CASE("NGR gradient vanishes at the returned estimate") {
  const auto data = testing::gaussian_data(400, 3, 13, [](auto& r) { return 1 + r[0]; });
  const auto model = ngr_fit(data, IndexSet{0, 2});
  // Central finite differences of the log-likelihood, per observation.
  auto ll = [&](const Eigen::VectorXd& beta, const Eigen::VectorXd& gamma) {
    double s = 0.0;
    for (std::size_t i = 0; i < data.n(); ++i) {
      const double mu = beta(0) + beta(1) * data.x(i, 0) + beta(2) * data.x(i, 2);
      const double eta = gamma(0) + gamma(1) * data.x(i, 0) + gamma(2) * data.x(i, 2);
      const double r = data.y(i) - mu;
      s += -eta - 0.5 * r * r * std::exp(-2 * eta) - 0.5 * std::log(2 * std::numbers::pi);
    }
    return s;
  };
  CHECK(ll(model.beta, model.gamma) == doctest::Approx(model.log_likelihood).epsilon(1e-12));
  const double h = 1e-5;
  for (int k = 0; k < 3; ++k) {
    Eigen::VectorXd bp = model.beta, bm = model.beta, gp = model.gamma, gm = model.gamma;
    bp(k) += h;
    bm(k) -= h;
    gp(k) += h;
    gm(k) -= h;
    CHECK(std::abs((ll(bp, model.gamma) - ll(bm, model.gamma)) / (2 * h)) / 400.0 < 1e-6);
    CHECK(std::abs((ll(model.beta, gp) - ll(model.beta, gm)) / (2 * h)) / 400.0 < 1e-6);
  }
}

TEST_CASE("NGR rejects degenerate designs") {
  auto base = testing::gaussian_data(50, 1, 14, [](auto& r) { return r[0]; });
  std::vector<double> c0(base.column(0).begin(), base.column(0).end());
  auto c1 = c0;
  for (auto& v : c1) v *= 2.0;
  const auto collinear =
      testing::make_data(std::vector<double>(base.response().begin(), base.response().end()), {c0, c1});
  CHECK_THROWS_AS(ngr_fit(collinear, IndexSet{0, 1}), NgrRankError);
  const auto tiny = testing::gaussian_data(5, 3, 15, [](auto&) { return 0.0; });
  CHECK_THROWS_AS(ngr_fit(tiny, IndexSet{0, 1, 2}), NgrRankError);
  NgrOptions strict;
  strict.max_iterations = 1;
  Rng rng(16);
  std::vector<double> x(300), y(300);
  for (std::size_t i = 0; i < 300; ++i) {
    x[i] = rng.normal();
    y[i] = std::exp(x[i]) * rng.normal();
  }
  const auto hetero = testing::make_data(y, {x});
  CHECK_THROWS_AS(ngr_fit(hetero, IndexSet{0}, strict), NgrConvergenceError);
}

TEST_CASE("NGR stepwise never undoes its previous move") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto data = testing::gaussian_data(300, 5, seed, [](auto& r) { return r[0] + 0.3 * r[1]; });
    const auto result = ngr_bic_stepwise(data);
    for (std::size_t k = 1; k < result.moves.size(); ++k) {
      const auto& a = result.moves[k - 1];
      const auto& b = result.moves[k];
      CHECK_FALSE((a.covariate == b.covariate && a.add != b.add));
      CHECK(b.bic < a.bic);
    }
    CHECK(result.model.covariates.contains(0));
    CHECK(result.model.bic == doctest::Approx(ngr_fit(data, result.model.covariates).bic).epsilon(1e-9));
  }
}

TEST_CASE("NGR stepwise is independent of the thread count") {
  const auto data = testing::gaussian_data(300, 6, 17, [](auto& r) { return r[2] - r[4]; });
  const auto a = ngr_bic_stepwise(data, {}, 1);
  const auto b = ngr_bic_stepwise(data, {}, 4);
  CHECK(a.model.covariates == b.model.covariates);
  CHECK(a.model.bic == b.model.bic);
}
