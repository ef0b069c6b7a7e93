#pragma once

// Shared generators and reference implementations for the tests.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "ctds/ctds.hpp"

namespace ctds::testing {

inline double unif(Rng& rng, double a, double b) { return a + (b - a) * uniform01(rng); }

inline std::size_t pick(Rng& rng, std::size_t n) {
  return std::min(n - 1, static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n)));
}

// Random grid with a 0/1 location layer "loc", a continuous layer "elev" and a
// feature layer "feat" (at least one feature cell).
inline std::shared_ptr<RasterGrid> random_grid(Rng& rng, std::size_t rows, std::size_t cols, double cell = 1.0) {
  auto g = std::make_shared<RasterGrid>(rows, cols, cell, unif(rng, -5, 5), unif(rng, -5, 5));
  const std::size_t n = rows * cols;
  std::vector<double> loc(n), elev(n), feat(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    loc[i] = uniform01(rng) < 0.4 ? 1.0 : 0.0;
    elev[i] = unif(rng, -1, 1);
  }
  feat[pick(rng, n)] = 1.0;
  if (n > 4) feat[pick(rng, n)] = 1.0;
  g->add_layer("loc", loc);
  g->add_layer("elev", elev);
  g->add_layer("feat", feat);
  return g;
}

// Random walk over rook neighbours with random residences; the last visit is censored.
inline DiscretePath random_discrete_path(Rng& rng, const RasterGrid& grid, std::size_t n_moves, double t0 = 0.0) {
  DiscretePath dp;
  CellId c{pick(rng, grid.n_cells())};
  double t = t0;
  for (std::size_t k = 0; k <= n_moves; ++k) {
    dp.cells.push_back(c);
    dp.clock_times.push_back(t);
    const double tau = unif(rng, 0.05, 2.0);
    dp.residence_times.push_back(tau);
    t += tau;
    const auto nbs = grid.neighbors(c);
    c = nbs[pick(rng, nbs.size())].cell;
  }
  for (std::size_t i = 0; i + 1 < dp.cells.size(); ++i) dp.residence_times[i] = dp.clock_times[i + 1] - dp.clock_times[i];
  dp.end_time = t;
  dp.residence_times.back() = dp.end_time - dp.clock_times.back();
  return dp;
}

inline std::vector<CovariateSpec> basic_specs() {
  return {CovariateSpec::intercept(), CovariateSpec::location("loc", "loc"), CovariateSpec::location("elev", "elev"),
          CovariateSpec::directional_feature("feat", "feat"), CovariateSpec::directional_persistence()};
}

// A random latent-Poisson design: random path on a random grid.
inline DesignData random_design(Rng& rng, std::size_t n_moves, std::size_t rows = 6, std::size_t cols = 6) {
  auto g = random_grid(rng, rows, cols);
  const auto dp = random_discrete_path(rng, *g, n_moves);
  return build_design(dp, CovariateModel(g, basic_specs()));
}

// Kolmogorov-Smirnov distance between a sample and a CDF.
inline double ks_distance(std::vector<double> x, const std::function<double(double)>& cdf) {
  std::sort(x.begin(), x.end());
  const double n = static_cast<double>(x.size());
  double d = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double f = cdf(x[i]);
    d = std::max({d, std::abs(f - static_cast<double>(i) / n), std::abs(static_cast<double>(i + 1) / n - f)});
  }
  return d;
}

// Two-sample KS distance.
inline double ks_two_sample(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double v = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= v) ++i;
    while (j < b.size() && b[j] <= v) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / static_cast<double>(a.size()) -
                             static_cast<double>(j) / static_cast<double>(b.size())));
  }
  return d;
}

inline double laplace_cdf(double x, double rate) {
  return x < 0.0 ? 0.5 * std::exp(rate * x) : 1.0 - 0.5 * std::exp(-rate * x);
}

// Integrated-OU state covariance over [0, delta] by composite Simpson on the
// closed-form propagator; independent of the analytic formulas under test.
inline Eigen::Matrix2d ou_q_by_quadrature(double g, double s, double delta, int n = 4000) {
  auto integrand = [&](double u) {
    const Eigen::Vector2d col((1.0 - std::exp(-g * u)) / g, std::exp(-g * u));
    return Eigen::Matrix2d(s * s * col * col.transpose());
  };
  // Keep g h small so Simpson resolves the exponential decay.
  n = std::max(n, 2 * static_cast<int>(std::ceil(100.0 * g * delta)));
  const double h = delta / n;
  Eigen::Matrix2d acc = integrand(0.0) + integrand(delta);
  for (int i = 1; i < n; ++i) acc += (i % 2 ? 4.0 : 2.0) * integrand(i * h);
  return acc * h / 3.0;
}

// Poisson log-likelihood written out row by row.
inline double naive_poisson_loglik(const DesignData& d, const Eigen::VectorXd& b) {
  double ll = 0.0;
  for (Eigen::Index i = 0; i < d.n_rows(); ++i) {
    double eta = d.offset[i];
    for (Eigen::Index j = 0; j < d.n_cols(); ++j) eta += d.X(i, j) * b[j];
    ll += d.weight[i] * (d.z[i] * eta - std::exp(eta));
  }
  return ll;
}

// Plain proximal-gradient (ISTA with backtracking) solver of the weighted lasso,
// used as an independent reference for fit_lasso.
inline Eigen::VectorXd ista_lasso(const DesignData& d, double gamma, int iters = 200000) {
  const Eigen::VectorXd s = lasso_scales(d);
  Eigen::VectorXd lam(d.n_cols());
  for (Eigen::Index j = 0; j < d.n_cols(); ++j) lam[j] = d.penalized[static_cast<std::size_t>(j)] ? gamma * s[j] : 0.0;
  auto nll = [&](const Eigen::VectorXd& b) { return -naive_poisson_loglik(d, b); };
  auto grad = [&](const Eigen::VectorXd& b) { return Eigen::VectorXd(-poisson_loglik(d, b).gradient); };
  Eigen::VectorXd b = Eigen::VectorXd::Zero(d.n_cols());
  b[0] = detail::constant_start(d)[0];
  double L = 1.0;
  for (int it = 0; it < iters; ++it) {
    const Eigen::VectorXd g = grad(b);
    const double f = nll(b);
    Eigen::VectorXd nb;
    for (;;) {
      nb = b - g / L;
      for (Eigen::Index j = 0; j < nb.size(); ++j) {
        const double t = lam[j] / L;
        nb[j] = nb[j] > t ? nb[j] - t : (nb[j] < -t ? nb[j] + t : 0.0);
      }
      const Eigen::VectorXd diff = nb - b;
      if (nll(nb) <= f + g.dot(diff) + 0.5 * L * diff.squaredNorm() + 1e-15) break;
      L *= 2.0;
    }
    if ((nb - b).lpNorm<Eigen::Infinity>() < 1e-13) return nb;
    b = nb;
    L = std::max(1e-3, L / 1.5);
  }
  return b;
}

}  // namespace ctds::testing
