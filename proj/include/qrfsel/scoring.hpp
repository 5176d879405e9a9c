#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace qrfsel {

/// Probability levels t/(k+1), t = 1..k.
class QuantileGrid {
 public:
  explicit QuantileGrid(std::size_t k);
  std::size_t k() const { return levels_.size(); }
  std::span<const double> levels() const { return levels_; }
  double operator[](std::size_t t) const { return levels_[t]; }

 private:
  std::vector<double> levels_;
};

/// Step CDF: support z_1 <= ... <= z_m with cumulative probabilities
/// p_1 <= ... <= p_m = 1.
struct StepCDF {
  std::vector<double> support;
  std::vector<double> cumulative;

  /// Empirical CDF of a sample (support sorted, equal masses).
  static StepCDF empirical(std::span<const double> sample);
  /// Weighted empirical CDF; weights need not be normalised.
  static StepCDF weighted(std::span<const double> values, std::span<const double> weights);

  void validate() const;
  /// F(z) (right-continuous).
  double operator()(double z) const;
  /// Left limit F(z-).
  double left_limit(double z) const;
  /// Smallest support value with F >= tau.
  double quantile(double tau) const;
};

/// Check loss u * (tau - I(u < 0)).
double pinball(double u, double tau);

/// (2/k) * sum_t pinball(y - q_t, t/(k+1)); q must have one value per level
/// of the grid of size k = q.size().
double crps_from_quantiles(double y, std::span<const double> quantiles);

/// Exact integral of (I(y <= z) - F(z))^2 over the real line for a step CDF.
double crps_cdf_form(double y, const StepCDF& cdf);

/// Closed-form CRPS of N(mu, sigma^2) at y.
double crps_gaussian(double y, double mu, double sigma);

/// Standard normal CDF and density.
double normal_cdf(double z);
double normal_pdf(double z);

/// 1-based rank of the left-continuous tau-quantile among m equally weighted
/// sorted values: the smallest r with r/m >= tau.
std::size_t empirical_quantile_rank(std::size_t m, double tau);

}  // namespace qrfsel
