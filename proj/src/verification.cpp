#include "qrfsel/verification.hpp"

#include <algorithm>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include "qrfsel/dataset.hpp"

namespace qrfsel {

std::string to_string(DiagramKind kind) {
  switch (kind) {
    case DiagramKind::kPit:
      return "pit";
    case DiagramKind::kReliability:
      return "reliability";
    case DiagramKind::kQuantileReliability:
      return "quantile_reliability";
  }
  return "unknown";
}

std::size_t BinnedDiagram::total() const { return std::accumulate(counts.begin(), counts.end(), std::size_t{0}); }

BinnedDiagram pit_histogram(std::span<const double> pit, std::size_t bins) {
  if (bins < 1) throw std::invalid_argument("pit_histogram needs at least one bin");
  BinnedDiagram out;
  out.kind = DiagramKind::kPit;
  std::vector<double> edges(bins + 1);
  for (std::size_t b = 0; b <= bins; ++b) edges[b] = static_cast<double>(b) / static_cast<double>(bins);
  out.lower.assign(edges.begin(), edges.end() - 1);
  out.upper.assign(edges.begin() + 1, edges.end());
  out.counts.assign(bins, 0);
  for (std::size_t i = 0; i < pit.size(); ++i) {
    const double v = pit[i];
    if (!(v >= 0.0 && v <= 1.0))
      throw std::invalid_argument("PIT value outside [0, 1] at position " + std::to_string(i));
    auto b = static_cast<std::size_t>(std::upper_bound(edges.begin(), edges.end(), v) - edges.begin()) - 1;
    out.counts[std::min(b, bins - 1)]++;
  }
  return out;
}

namespace {

// Sorted order of `keys` cut into at most `bins` groups of roughly equal size,
// never separating equal keys. Returns [begin, end) offsets into `order`.
std::vector<std::pair<std::size_t, std::size_t>> equal_count_groups(std::span<const double> keys,
                                                                    std::vector<std::size_t>& order, std::size_t bins) {
  const std::size_t n = keys.size();
  order.resize(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return keys[a] < keys[b]; });
  std::vector<std::pair<std::size_t, std::size_t>> groups;
  std::size_t begin = 0;
  for (std::size_t b = 1; b <= bins && begin < n; ++b) {
    std::size_t end = b == bins ? n : std::max(begin, (b * n + bins / 2) / bins);
    while (end < n && end > 0 && keys[order[end]] == keys[order[end - 1]]) ++end;
    if (end > begin) groups.emplace_back(begin, end);
    begin = end;
  }
  return groups;
}

void check_lengths(std::size_t a, std::size_t b) {
  if (a != b)
    throw std::invalid_argument("length mismatch: " + std::to_string(a) + " forecasts, " + std::to_string(b) +
                                " outcomes");
}

}  // namespace

BinnedDiagram reliability_diagram(std::span<const double> probs, std::span<const int> outcomes, std::size_t bins,
                                  std::optional<double> threshold) {
  check_lengths(probs.size(), outcomes.size());
  if (bins < 1) throw std::invalid_argument("reliability_diagram needs at least one bin");
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (!(probs[i] >= 0.0 && probs[i] <= 1.0))
      throw std::invalid_argument("probability outside [0, 1] at position " + std::to_string(i));
    if (outcomes[i] != 0 && outcomes[i] != 1)
      throw std::invalid_argument("outcome must be 0 or 1 at position " + std::to_string(i));
  }
  BinnedDiagram out;
  out.kind = DiagramKind::kReliability;
  out.threshold = threshold;
  std::vector<std::size_t> order;
  for (auto [begin, end] : equal_count_groups(probs, order, bins)) {
    double sp = 0.0, so = 0.0;
    for (std::size_t r = begin; r < end; ++r) {
      sp += probs[order[r]];
      so += outcomes[order[r]];
    }
    const double m = static_cast<double>(end - begin);
    out.lower.push_back(probs[order[begin]]);
    out.upper.push_back(probs[order[end - 1]]);
    out.counts.push_back(end - begin);
    out.mean_forecast.push_back(sp / m);
    out.mean_outcome.push_back(so / m);
  }
  return out;
}

BinnedDiagram quantile_reliability(std::span<const double> quantiles, std::span<const double> outcomes, double tau,
                                   std::size_t bins) {
  check_lengths(quantiles.size(), outcomes.size());
  if (!(tau > 0.0 && tau < 1.0)) throw std::invalid_argument("quantile level must lie in (0, 1)");
  if (bins < 1) throw std::invalid_argument("quantile_reliability needs at least one bin");
  BinnedDiagram out;
  out.kind = DiagramKind::kQuantileReliability;
  out.level = tau;
  std::vector<std::size_t> order;
  std::vector<double> ys;
  for (auto [begin, end] : equal_count_groups(quantiles, order, bins)) {
    double sq = 0.0;
    ys.clear();
    for (std::size_t r = begin; r < end; ++r) {
      sq += quantiles[order[r]];
      ys.push_back(outcomes[order[r]]);
    }
    std::sort(ys.begin(), ys.end());
    out.lower.push_back(quantiles[order[begin]]);
    out.upper.push_back(quantiles[order[end - 1]]);
    out.counts.push_back(end - begin);
    out.mean_forecast.push_back(sq / static_cast<double>(end - begin));
    out.mean_outcome.push_back(ys[empirical_quantile_rank(ys.size(), tau) - 1]);
  }
  return out;
}

double randomized_pit(const StepCDF& cdf, double y, double u) {
  if (!(u >= 0.0 && u <= 1.0)) throw std::invalid_argument("randomisation draw must lie in [0, 1]");
  const double lo = cdf.left_limit(y);
  return lo + u * (cdf(y) - lo);
}

void write_diagram_csv(std::ostream& out, const BinnedDiagram& diagram) {
  out << "kind,bin,lower,upper,count,mean_forecast,mean_outcome\n";
  const auto kind = to_string(diagram.kind);
  for (std::size_t b = 0; b < diagram.bins(); ++b) {
    out << kind << ',' << b << ',' << format_double(diagram.lower[b]) << ',' << format_double(diagram.upper[b]) << ','
        << diagram.counts[b] << ',';
    if (b < diagram.mean_forecast.size()) out << format_double(diagram.mean_forecast[b]);
    out << ',';
    if (b < diagram.mean_outcome.size()) out << format_double(diagram.mean_outcome[b]);
    out << '\n';
  }
}

}  // namespace qrfsel
