#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qrfsel/scoring.hpp"

namespace qrfsel {

enum class DiagramKind { kPit, kReliability, kQuantileReliability };
std::string to_string(DiagramKind kind);

/// Binned calibration data. Bin b covers [lower[b], upper[b]]; for PIT
/// histograms these are the equal-width edges, for the equal-count kinds the
/// range of forecasts that fell into the bin. mean_outcome is the outcome
/// frequency (reliability) or the empirical tau-quantile of the outcomes
/// (quantile reliability); it is empty for PIT histograms.
struct BinnedDiagram {
  DiagramKind kind = DiagramKind::kPit;
  std::vector<double> lower;
  std::vector<double> upper;
  std::vector<std::size_t> counts;
  std::vector<double> mean_forecast;
  std::vector<double> mean_outcome;
  std::optional<double> threshold;  // reliability: event Y <= threshold
  std::optional<double> level;      // quantile reliability: tau

  std::size_t bins() const { return counts.size(); }
  std::size_t total() const;
};

/// Equal-width bins over [0, 1], half-open except the last, which is closed.
BinnedDiagram pit_histogram(std::span<const double> pit, std::size_t bins);

/// Equal-count bins of the forecast probabilities; tied forecasts always
/// share a bin, so bins may be unequal and empty bins are dropped.
BinnedDiagram reliability_diagram(std::span<const double> probs, std::span<const int> outcomes, std::size_t bins,
                                  std::optional<double> threshold = std::nullopt);

/// Equal-count bins of the quantile forecasts; per bin the mean forecast and
/// the left-continuous empirical tau-quantile of the outcomes.
BinnedDiagram quantile_reliability(std::span<const double> quantiles, std::span<const double> outcomes, double tau,
                                   std::size_t bins);

/// F(y-) + u (F(y) - F(y-)): uniform under calibration even for step CDFs.
double randomized_pit(const StepCDF& cdf, double y, double u);

/// CSV with header kind,bin,lower,upper,count,mean_forecast,mean_outcome.
void write_diagram_csv(std::ostream& out, const BinnedDiagram& diagram);

}  // namespace qrfsel
