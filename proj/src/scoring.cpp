#include "qrfsel/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>
#include <string>

namespace qrfsel {

QuantileGrid::QuantileGrid(std::size_t k) {
  if (k < 1) throw std::invalid_argument("quantile grid needs k >= 1");
  levels_.resize(k);
  for (std::size_t t = 0; t < k; ++t) levels_[t] = static_cast<double>(t + 1) / static_cast<double>(k + 1);
}

std::size_t empirical_quantile_rank(std::size_t m, double tau) {
  const double x = tau * static_cast<double>(m);
  auto r = static_cast<std::size_t>(std::ceil(x - 1e-10 * std::max(1.0, x)));
  return std::clamp<std::size_t>(r, 1, m);
}

StepCDF StepCDF::empirical(std::span<const double> sample) {
  std::vector<double> ones(sample.size(), 1.0);
  return weighted(sample, ones);
}

StepCDF StepCDF::weighted(std::span<const double> values, std::span<const double> weights) {
  if (values.size() != weights.size()) throw std::invalid_argument("values and weights differ in length");
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return values[a] < values[b]; });
  double total = 0.0;
  for (auto w : weights) total += w;
  if (!(total > 0.0)) throw std::invalid_argument("step CDF needs positive total weight");

  StepCDF cdf;
  double running = 0.0;
  for (auto idx : order) {
    if (weights[idx] <= 0.0) continue;
    running += weights[idx];
    if (!cdf.support.empty() && cdf.support.back() == values[idx]) {
      cdf.cumulative.back() = running / total;
    } else {
      cdf.support.push_back(values[idx]);
      cdf.cumulative.push_back(running / total);
    }
  }
  cdf.cumulative.back() = 1.0;
  return cdf;
}

void StepCDF::validate() const {
  if (support.empty() || support.size() != cumulative.size()) throw std::invalid_argument("malformed step CDF");
  for (std::size_t j = 1; j < support.size(); ++j)
    if (support[j] < support[j - 1] || cumulative[j] < cumulative[j - 1])
      throw std::invalid_argument("step CDF must be nondecreasing");
  if (cumulative.front() < 0.0 || std::abs(cumulative.back() - 1.0) > 1e-9)
    throw std::invalid_argument("step CDF must end at 1");
}

double StepCDF::operator()(double z) const {
  auto it = std::upper_bound(support.begin(), support.end(), z);
  if (it == support.begin()) return 0.0;
  return cumulative[static_cast<std::size_t>(it - support.begin()) - 1];
}

double StepCDF::left_limit(double z) const {
  auto it = std::lower_bound(support.begin(), support.end(), z);
  if (it == support.begin()) return 0.0;
  return cumulative[static_cast<std::size_t>(it - support.begin()) - 1];
}

double StepCDF::quantile(double tau) const {
  for (std::size_t j = 0; j < support.size(); ++j)
    if (cumulative[j] >= tau - 1e-12) return support[j];
  return support.back();
}

double pinball(double u, double tau) {
  if (!(tau > 0.0 && tau < 1.0)) throw std::invalid_argument("pinball level must lie in (0, 1)");
  return u >= 0.0 ? u * tau : u * (tau - 1.0);
}

double crps_from_quantiles(double y, std::span<const double> quantiles) {
  const std::size_t k = quantiles.size();
  if (k == 0) throw std::invalid_argument("crps_from_quantiles needs at least one quantile");
  double sum = 0.0;
  for (std::size_t t = 0; t < k; ++t) {
    const double tau = static_cast<double>(t + 1) / static_cast<double>(k + 1);
    const double u = y - quantiles[t];
    sum += u >= 0.0 ? u * tau : u * (tau - 1.0);
  }
  return 2.0 * sum / static_cast<double>(k);
}

double crps_cdf_form(double y, const StepCDF& cdf) {
  cdf.validate();
  // Breakpoints of the integrand: the support and the observation.
  std::vector<double> points(cdf.support);
  points.push_back(y);
  std::sort(points.begin(), points.end());
  points.erase(std::unique(points.begin(), points.end()), points.end());

  double total = 0.0;
  std::size_t next_support = 0;
  double level = 0.0;
  for (std::size_t j = 0; j + 1 < points.size(); ++j) {
    const double a = points[j];
    while (next_support < cdf.support.size() && cdf.support[next_support] <= a) level = cdf.cumulative[next_support++];
    const double indicator = y <= a ? 1.0 : 0.0;
    const double diff = indicator - level;
    total += diff * diff * (points[j + 1] - a);
  }
  return total;
}

double normal_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi); }

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

double crps_gaussian(double y, double mu, double sigma) {
  if (!(sigma > 0.0)) throw std::invalid_argument("crps_gaussian needs sigma > 0");
  const double z = (y - mu) / sigma;
  return sigma * (z * (2.0 * normal_cdf(z) - 1.0) + 2.0 * normal_pdf(z) - 1.0 / std::sqrt(std::numbers::pi));
}

}  // namespace qrfsel
