#include <cmath>
#include <numbers>
#include <optional>

#include "qrfsel/baselines.hpp"
#include "qrfsel/parallel.hpp"

namespace qrfsel {

namespace {

Eigen::MatrixXd design_matrix(const Dataset& data, const IndexSet& covariates) {
  Eigen::MatrixXd z(data.n(), covariates.size() + 1);
  z.col(0).setOnes();
  for (std::size_t c = 0; c < covariates.size(); ++c) {
    const auto col = data.column(covariates[c]);
    for (std::size_t i = 0; i < data.n(); ++i)
      z(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c + 1)) = col[i];
  }
  return z;
}

double log_likelihood(const Eigen::MatrixXd& z, const Eigen::VectorXd& y, const Eigen::VectorXd& beta,
                      const Eigen::VectorXd& gamma) {
  const Eigen::VectorXd eta = z * gamma;
  const Eigen::VectorXd r = y - z * beta;
  const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  double ll = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) ll -= eta(i) + 0.5 * r(i) * r(i) * std::exp(-2.0 * eta(i)) + half_log_2pi;
  return ll;
}

}  // namespace

double NgrModel::mean(std::span<const double> x) const {
  double mu = beta(0);
  for (std::size_t c = 0; c < covariates.size(); ++c) mu += beta(static_cast<Eigen::Index>(c + 1)) * x[covariates[c]];
  return mu;
}

double NgrModel::sigma(std::span<const double> x) const {
  double eta = gamma(0);
  for (std::size_t c = 0; c < covariates.size(); ++c) eta += gamma(static_cast<Eigen::Index>(c + 1)) * x[covariates[c]];
  return std::exp(eta);
}

NgrModel ngr_fit(const Dataset& data, const IndexSet& covariates, const NgrOptions& options) {
  covariates.validate(data.d());
  const auto n = static_cast<Eigen::Index>(data.n());
  const auto p = static_cast<Eigen::Index>(covariates.size() + 1);
  if (n <= 2 * p) throw NgrRankError("too few observations for the NGR design");

  const Eigen::MatrixXd z = design_matrix(data, covariates);
  const Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(data.response().data(), n);

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(z);
  if (qr.rank() < p) throw NgrRankError("NGR design matrix is rank deficient");

  Eigen::VectorXd beta = qr.solve(y);
  const double rss = (y - z * beta).squaredNorm();
  if (!(rss > 0.0)) throw NgrRankError("NGR design fits the response exactly; scale is not identifiable");
  Eigen::VectorXd gamma = Eigen::VectorXd::Zero(p);
  gamma(0) = 0.5 * std::log(rss / static_cast<double>(n));

  NgrModel model;
  model.covariates = covariates;
  model.n = data.n();
  model.initial_log_likelihood = log_likelihood(z, y, beta, gamma);
  double ll = model.initial_log_likelihood;

  const double scale = 1.0 / static_cast<double>(n);
  const Eigen::MatrixXd ztz = z.transpose() * z;
  Eigen::VectorXd grad(2 * p);
  bool converged = false;
  std::size_t iter = 0;
  for (; iter < options.max_iterations; ++iter) {
    const Eigen::VectorXd eta = z * gamma;
    const Eigen::VectorXd r = y - z * beta;
    const Eigen::VectorXd e = (-2.0 * eta.array()).exp().matrix();
    const Eigen::VectorXd re = r.cwiseProduct(e);
    const Eigen::VectorXd r2e = r.cwiseProduct(re);
    grad.head(p) = z.transpose() * re;
    grad.tail(p) = z.transpose() * (r2e.array() - 1.0).matrix();
    if (grad.norm() * scale <= options.gradient_tolerance) {
      converged = true;
      break;
    }

    // Observed information; Fisher scoring when it is not positive definite.
    Eigen::MatrixXd info(2 * p, 2 * p);
    info.topLeftCorner(p, p) = z.transpose() * e.asDiagonal() * z;
    info.bottomRightCorner(p, p) = 2.0 * z.transpose() * r2e.asDiagonal() * z;
    info.topRightCorner(p, p) = 2.0 * z.transpose() * re.asDiagonal() * z;
    info.bottomLeftCorner(p, p) = info.topRightCorner(p, p).transpose();
    Eigen::LLT<Eigen::MatrixXd> llt(info);
    Eigen::VectorXd direction;
    if (llt.info() == Eigen::Success) direction = llt.solve(grad);
    auto fisher_direction = [&] {
      Eigen::VectorXd dir(2 * p);
      dir.head(p) = (z.transpose() * e.asDiagonal() * z).ldlt().solve(grad.head(p));
      dir.tail(p) = (2.0 * ztz).ldlt().solve(grad.tail(p));
      return dir;
    };
    if (llt.info() != Eigen::Success || !direction.allFinite()) direction = fisher_direction();

    auto try_direction = [&](const Eigen::VectorXd& dir) -> bool {
      double t = 1.0;
      for (int halving = 0; halving < 60; ++halving, t *= 0.5) {
        Eigen::VectorXd b = beta + t * dir.head(p);
        Eigen::VectorXd g = gamma + t * dir.tail(p);
        const double candidate = log_likelihood(z, y, b, g);
        // Near the optimum the gain of a full step is below the rounding
        // error of ll itself; let the unit step through within that slack.
        const double slack = halving == 0 ? 1e-12 * (1.0 + std::abs(ll)) : 0.0;
        if (std::isfinite(candidate) && candidate >= ll - slack) {
          beta = std::move(b);
          gamma = std::move(g);
          ll = candidate;
          return true;
        }
      }
      return false;
    };
    if (!try_direction(direction) && !try_direction(fisher_direction())) {
      // No representable ascent remains; accept only if already near stationary.
      if (grad.norm() * scale <= 1e3 * options.gradient_tolerance) {
        converged = true;
        break;
      }
      throw NgrConvergenceError("NGR line search failed with mean gradient norm " +
                                std::to_string(grad.norm() * scale));
    }
  }
  if (!converged)
    throw NgrConvergenceError("NGR fit did not converge within " + std::to_string(options.max_iterations) +
                              " iterations");
  if (ll < model.initial_log_likelihood) throw std::logic_error("NGR fit decreased the log-likelihood");

  model.beta = beta;
  model.gamma = gamma;
  model.log_likelihood = ll;
  model.iterations = iter;
  model.bic = -2.0 * ll + static_cast<double>(2 * p) * std::log(static_cast<double>(n));

  // Standard errors from the expected information at the optimum.
  const Eigen::VectorXd e = (-2.0 * (z * gamma).array()).exp().matrix();
  const Eigen::MatrixXd beta_cov = (z.transpose() * e.asDiagonal() * z).inverse();
  const Eigen::MatrixXd gamma_cov = (2.0 * ztz).inverse();
  model.beta_se = beta_cov.diagonal().cwiseSqrt();
  model.gamma_se = gamma_cov.diagonal().cwiseSqrt();
  return model;
}

NgrStepwiseResult ngr_bic_stepwise(const Dataset& data, const NgrOptions& options, std::size_t threads) {
  NgrStepwiseResult result;
  result.model = ngr_fit(data, IndexSet{}, options);

  for (;;) {
    struct Candidate {
      bool add;
      std::size_t covariate;
      IndexSet set;
    };
    std::vector<Candidate> moves;
    const auto& current = result.model.covariates;
    for (auto j : complement(current, data.d())) moves.push_back({true, j, current.with(j)});
    for (auto j : current) {
      IndexSet reduced;
      for (auto k : current)
        if (k != j) reduced.insert(k);
      moves.push_back({false, j, std::move(reduced)});
    }

    std::vector<std::optional<NgrModel>> fits(moves.size());
    parallel_for(moves.size(), threads, [&](std::size_t m) {
      try {
        fits[m] = ngr_fit(data, moves[m].set, options);
      } catch (const NgrRankError&) {
        // collinear candidate: not a legal move
      }
    });

    std::optional<std::size_t> best;
    for (std::size_t m = 0; m < moves.size(); ++m) {
      if (!fits[m]) continue;
      if (!best || fits[m]->bic < fits[*best]->bic) best = m;
    }
    if (!best || !(fits[*best]->bic < result.model.bic)) break;
    result.moves.push_back({moves[*best].add, moves[*best].covariate, fits[*best]->bic});
    result.model = std::move(*fits[*best]);
  }
  return result;
}

}  // namespace qrfsel
