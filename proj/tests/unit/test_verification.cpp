#include <doctest.h>

#include <sstream>
#include <vector>

#include "qrfsel/random.hpp"
#include "qrfsel/verification.hpp"

using namespace qrfsel;

TEST_CASE("pit histogram of a regular grid") {
  // Half-open bins [b/10, (b+1)/10): 0.1 opens bin 1, so bin 0 stays empty.
  const std::vector<double> v{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  const auto h = pit_histogram(v, 10);
  CHECK(h.counts == std::vector<std::size_t>{0, 1, 1, 1, 1, 1, 1, 1, 1, 1});
  CHECK(h.total() == 9);
  CHECK(h.lower.front() == 0.0);
  CHECK(h.upper.back() == 1.0);
}

TEST_CASE("pit histogram edges") {
  const auto h = pit_histogram(std::vector<double>{0.0, 1.0, 0.05, 0.999}, 10);
  CHECK(h.counts == std::vector<std::size_t>{2, 0, 0, 0, 0, 0, 0, 0, 0, 2});
  const auto same = pit_histogram(std::vector<double>(7, 0.5), 10);
  std::size_t nonzero = 0;
  for (auto c : same.counts) nonzero += c > 0;
  CHECK(nonzero == 1);
  CHECK(same.counts[5] == 7);
  CHECK_THROWS(pit_histogram(std::vector<double>{1.1}, 10));
  CHECK_THROWS(pit_histogram(std::vector<double>{-0.1}, 10));
}

TEST_CASE("reliability diagram small cases") {
  const auto zero = reliability_diagram(std::vector<double>(5, 0.0), std::vector<int>(5, 0), 10);
  REQUIRE(zero.bins() == 1);
  CHECK(zero.mean_forecast[0] == 0.0);
  CHECK(zero.mean_outcome[0] == 0.0);

  const auto wrong = reliability_diagram(std::vector<double>{1.0}, std::vector<int>{0}, 10);
  REQUIRE(wrong.bins() == 1);
  CHECK(wrong.mean_forecast[0] == 1.0);
  CHECK(wrong.mean_outcome[0] == 0.0);

  CHECK_THROWS(reliability_diagram(std::vector<double>{0.5, 0.5}, std::vector<int>{1}, 2));
  CHECK_THROWS(reliability_diagram(std::vector<double>{0.5}, std::vector<int>{2}, 2));
}

TEST_CASE("equal-count bins keep ties together and conserve counts") {
  Rng rng(1);
  for (int rep = 0; rep < 200; ++rep) {
    const std::size_t n = 1 + rng.below(200);
    std::vector<double> p(n);
    std::vector<int> o(n);
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = static_cast<double>(rng.below(11)) / 10.0;
      o[i] = rng.uniform() < p[i];
    }
    const auto bins = 1 + rng.below(12);
    const auto d = reliability_diagram(p, o, bins);
    CHECK(d.total() == n);
    CHECK(d.bins() <= bins);
    for (std::size_t b = 0; b + 1 < d.bins(); ++b) CHECK(d.upper[b] < d.lower[b + 1]);
  }
}

TEST_CASE("quantile reliability small cases") {
  const std::vector<double> q{1, 2, 3, 4, 5, 6};
  const auto perfect = quantile_reliability(q, q, 0.5, 3);
  REQUIRE(perfect.bins() == 3);
  for (std::size_t b = 0; b < 3; ++b) {
    CHECK(perfect.mean_outcome[b] >= perfect.lower[b]);
    CHECK(perfect.mean_outcome[b] <= perfect.upper[b]);
  }
  const std::vector<double> y{6, 1, 5, 2, 4, 3};
  const auto one = quantile_reliability(q, y, 0.5, 1);
  REQUIRE(one.bins() == 1);
  CHECK(one.mean_forecast[0] == 3.5);
  CHECK(one.mean_outcome[0] == 3.0);  // left-continuous median of 1..6
  CHECK_THROWS(quantile_reliability(q, std::vector<double>{1}, 0.5, 2));
  CHECK_THROWS(quantile_reliability(q, q, 1.0, 2));
}

TEST_CASE("randomized PIT spans the jump of a step CDF") {
  const auto f = StepCDF::empirical(std::vector<double>{1, 2, 2, 3});
  CHECK(randomized_pit(f, 2.0, 0.0) == 0.25);
  CHECK(randomized_pit(f, 2.0, 1.0) == 0.75);
  CHECK(randomized_pit(f, 2.0, 0.5) == 0.5);
  CHECK(randomized_pit(f, 2.5, 0.3) == 0.75);
  CHECK(randomized_pit(f, 0.0, 0.9) == 0.0);
}

TEST_CASE("diagram CSV layout") {
  std::ostringstream out;
  write_diagram_csv(out, pit_histogram(std::vector<double>{0.2, 0.7}, 2));
  CHECK(out.str() ==
        "kind,bin,lower,upper,count,mean_forecast,mean_outcome\n"
        "pit,0,0,0.5,1,,\n"
        "pit,1,0.5,1,1,,\n");
}
