#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ctds/design.hpp"
#include "ctds/error.hpp"
#include "ctds/glm.hpp"
#include "ctds/parallel.hpp"
#include "ctds/rng.hpp"

namespace ctds {

// Gaussian N(0, covariance) prior, or the hierarchical lasso prior
// beta_k | s2_k ~ N(0, s2_k), s2_k ~ Exp(rate gamma^2 / 2) on penalized columns,
// with unpenalized columns (intercepts) kept N(0, intercept_variance).
struct BetaPrior {
  enum class Kind { Gaussian, Laplace };
  Kind kind = Kind::Gaussian;
  Eigen::MatrixXd covariance;  // empty -> variance_default * I
  double variance_default = 100.0;
  double gamma = 0.0;
  Eigen::VectorXd gamma_scale;  // optional per-column multiplier on gamma (empty -> 1)
  double intercept_variance = 100.0;

  double gamma_for(Eigen::Index j) const { return gamma_scale.size() ? gamma * gamma_scale[j] : gamma; }

  static BetaPrior gaussian(double variance = 100.0) {
    BetaPrior p;
    p.variance_default = variance;
    return p;
  }
  static BetaPrior gaussian(Eigen::MatrixXd cov) {
    BetaPrior p;
    p.covariance = std::move(cov);
    return p;
  }
  static BetaPrior laplace(double gamma, double intercept_variance = 100.0) {
    BetaPrior p;
    p.kind = Kind::Laplace;
    p.gamma = gamma;
    p.intercept_variance = intercept_variance;
    return p;
  }
};

struct McmcOptions {
  std::size_t n_iter = 20000;
  std::optional<std::size_t> n_burn;  // default: a quarter of n_iter
  bool use_likelihood = true;
  double target_acceptance = 0.234;
  std::size_t thin = 1;

  std::size_t burn() const { return n_burn ? *n_burn : n_iter / 4; }
};

struct McmcChain {
  std::vector<std::string> names;
  Eigen::MatrixXd draws;         // kept iterations x coefficients
  Eigen::MatrixXd sigma2_draws;  // lasso prior only; columns follow `names`, unpenalized columns hold their fixed variance
  std::vector<double> acceptance_rate;  // per block; one block here (all coefficients)
  std::uint64_t seed = 0;
  double proposal_scale = 0.0;

  Eigen::Index n_draws() const { return draws.rows(); }
  Eigen::VectorXd mean() const { return draws.colwise().mean().transpose(); }
  Eigen::VectorXd sd() const {
    const Eigen::RowVectorXd m = draws.colwise().mean();
    const double n = static_cast<double>(std::max<Eigen::Index>(2, draws.rows()));
    return ((draws.rowwise() - m).array().square().colwise().sum() / (n - 1.0)).sqrt().matrix().transpose();
  }
  double quantile(Eigen::Index j, double q) const {
    std::vector<double> v(draws.col(j).data(), draws.col(j).data() + draws.rows());
    std::sort(v.begin(), v.end());
    if (v.empty()) return std::nan("");
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
  }
};

// Monte-Carlo standard error of a series mean by non-overlapping batch means.
inline double batch_means_mcse(const Eigen::Ref<const Eigen::VectorXd>& x) {
  const auto n = static_cast<std::size_t>(x.size());
  if (n < 4) return std::nan("");
  const auto b = static_cast<std::size_t>(std::floor(std::sqrt(static_cast<double>(n))));
  const std::size_t a = n / b;
  const double overall = x.head(static_cast<Eigen::Index>(a * b)).mean();
  double s = 0.0;
  for (std::size_t k = 0; k < a; ++k) {
    const double m = x.segment(static_cast<Eigen::Index>(k * b), static_cast<Eigen::Index>(b)).mean();
    s += (m - overall) * (m - overall);
  }
  const double var_batch = s / static_cast<double>(a - 1);
  return std::sqrt(var_batch * static_cast<double>(b) / static_cast<double>(a * b));
}

inline Eigen::VectorXd mcse(const McmcChain& chain) {
  Eigen::VectorXd out(chain.draws.cols());
  for (Eigen::Index j = 0; j < chain.draws.cols(); ++j) out[j] = batch_means_mcse(chain.draws.col(j));
  return out;
}

// Inverse Gaussian draw (Michael, Schucany and Haas).
inline double inverse_gaussian(Rng& rng, double mean, double shape) {
  const double nu = standard_normal(rng);
  const double y = nu * nu;
  const double x = mean + mean * mean * y / (2.0 * shape) -
                   mean / (2.0 * shape) * std::sqrt(4.0 * mean * shape * y + mean * mean * y * y);
  return uniform01(rng) <= mean / (mean + x) ? x : mean * mean / x;
}

namespace detail {

inline double safe_loglik(const DesignData& d, const Eigen::VectorXd& beta) {
  try {
    return poisson_loglik(d, beta).value;
  } catch (const NumericError&) {
    return -std::numeric_limits<double>::infinity();
  }
}

}  // namespace detail

// Random-walk Metropolis on beta with proposal c^2 (I_lik + P)^{-1}, where I_lik is the
// Fisher information at the start point and P the current prior precision; c adapts
// toward the target acceptance during burn-in and is then frozen. Under the lasso
// prior each 1/s2_k is drawn from its inverse-Gaussian conditional first.
inline McmcChain sample_beta(const DesignData& d, const BetaPrior& prior, const McmcOptions& opt, std::uint64_t seed) {
  d.validate();
  const Eigen::Index p = d.n_cols();
  const std::size_t n_burn = opt.burn();
  if (opt.n_iter <= n_burn) throw DomainError(detail::concat("n_iter ", opt.n_iter, " must exceed burn-in ", n_burn));
  const bool laplace = prior.kind == BetaPrior::Kind::Laplace;
  if (laplace && !(prior.gamma > 0.0))
    throw DomainError(detail::concat("lasso prior needs gamma > 0, got ", prior.gamma));
  if (laplace && prior.gamma_scale.size() && prior.gamma_scale.size() != p)
    throw DomainError(detail::concat("gamma_scale has ", prior.gamma_scale.size(), " entries, design has ", p, " columns"));

  // Fixed part of the prior precision (Gaussian) or the unpenalized variances (lasso).
  Eigen::MatrixXd P0 = Eigen::MatrixXd::Zero(p, p);
  if (!laplace) {
    Eigen::MatrixXd S = prior.covariance.size() ? prior.covariance
                                                : Eigen::MatrixXd(prior.variance_default * Eigen::MatrixXd::Identity(p, p));
    if (S.rows() != p || S.cols() != p)
      throw DomainError(detail::concat("prior covariance is ", S.rows(), "x", S.cols(), ", expected ", p, "x", p));
    Eigen::LLT<Eigen::MatrixXd> llt(S);
    if (llt.info() != Eigen::Success) throw DomainError("prior covariance is not positive definite");
    P0 = llt.solve(Eigen::MatrixXd::Identity(p, p));
  }

  Rng rng(seed);
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
  Eigen::MatrixXd I_lik = Eigen::MatrixXd::Zero(p, p);
  if (opt.use_likelihood) {
    try {
      beta = fit_irls(d).beta_hat;
    } catch (const Error&) {
      beta = detail::constant_start(d);
    }
    const Eigen::VectorXd eta = detail::linear_predictor(d, beta);
    const Eigen::VectorXd wmu = (d.weight.array() * eta.array().exp()).matrix();
    I_lik = d.X.transpose() * wmu.asDiagonal() * d.X;
  }

  Eigen::VectorXd s2 = Eigen::VectorXd::Ones(p);
  for (Eigen::Index j = 0; j < p; ++j)
    if (laplace)
      s2[j] = d.penalized[static_cast<std::size_t>(j)] ? 2.0 / (prior.gamma_for(j) * prior.gamma_for(j))
                                                       : prior.intercept_variance;
  // The inverse-Gaussian update degenerates at beta_k = 0 exactly; start penalized
  // coefficients sitting at zero from a prior draw instead.
  if (laplace)
    for (Eigen::Index j = 0; j < p; ++j)
      if (d.penalized[static_cast<std::size_t>(j)] && beta[j] == 0.0) beta[j] = std::sqrt(s2[j]) * standard_normal(rng);

  auto prior_precision = [&]() -> Eigen::MatrixXd {
    if (!laplace) return P0;
    return s2.cwiseInverse().asDiagonal();
  };
  auto log_target = [&](const Eigen::VectorXd& b, const Eigen::MatrixXd& P, double ll) {
    return ll - 0.5 * b.dot(P * b);
  };

  double ll = opt.use_likelihood ? detail::safe_loglik(d, beta) : 0.0;
  if (!std::isfinite(ll)) throw NumericError("sample_beta: log posterior is not finite at the starting point");

  Eigen::MatrixXd P = prior_precision();
  Eigen::MatrixXd L;  // Cholesky factor of (I_lik + P)^{-1}
  auto refresh_proposal = [&] {
    Eigen::LLT<Eigen::MatrixXd> llt(I_lik + P);
    if (llt.info() != Eigen::Success) throw NumericError("sample_beta: proposal precision is not positive definite");
    // Draw x ~ N(0, A^{-1}) as U^{-1} e where A = U'U.
    L = llt.matrixU();
  };
  refresh_proposal();

  double log_c = std::log(2.38 / std::sqrt(static_cast<double>(p)));
  const std::size_t thin = std::max<std::size_t>(1, opt.thin);
  const std::size_t n_keep = (opt.n_iter - n_burn + thin - 1) / thin;

  McmcChain chain;
  chain.names = d.column_names;
  chain.seed = seed;
  chain.draws.resize(static_cast<Eigen::Index>(n_keep), p);
  if (laplace) chain.sigma2_draws.resize(static_cast<Eigen::Index>(n_keep), p);

  std::size_t accepted_after = 0, accepted_burn = 0;
  Eigen::VectorXd e(p);
  std::size_t kept = 0;
  for (std::size_t it = 0; it < opt.n_iter; ++it) {
    if (laplace) {
      for (Eigen::Index j = 0; j < p; ++j) {
        if (!d.penalized[static_cast<std::size_t>(j)]) continue;
        const double g = prior.gamma_for(j);
        const double a = std::max(std::abs(beta[j]), 1e-300);
        s2[j] = 1.0 / inverse_gaussian(rng, g / a, g * g);
      }
      P = prior_precision();
      refresh_proposal();
    }
    for (Eigen::Index j = 0; j < p; ++j) e[j] = standard_normal(rng);
    const Eigen::VectorXd step = L.triangularView<Eigen::Upper>().solve(e);
    const Eigen::VectorXd cand = beta + std::exp(log_c) * step;
    const double cll = opt.use_likelihood ? detail::safe_loglik(d, cand) : 0.0;
    const double log_a = log_target(cand, P, cll) - log_target(beta, P, ll);
    const bool accept = std::isfinite(cll) && std::log(uniform01(rng)) < log_a;
    if (accept) {
      beta = cand;
      ll = cll;
    }
    if (it < n_burn) {
      accepted_burn += accept;
      const double rate = 1.0 / std::sqrt(static_cast<double>(it) + 1.0);
      log_c += rate * ((accept ? 1.0 : 0.0) - opt.target_acceptance);
    } else {
      accepted_after += accept;
      if ((it - n_burn) % thin == 0) {
        chain.draws.row(static_cast<Eigen::Index>(kept)) = beta.transpose();
        if (laplace) chain.sigma2_draws.row(static_cast<Eigen::Index>(kept)) = s2.transpose();
        ++kept;
      }
    }
  }
  const double acc = static_cast<double>(accepted_after) / static_cast<double>(opt.n_iter - n_burn);
  if (accepted_after == 0)
    throw ConvergenceError(detail::concat("sample_beta: no proposals accepted after adaptation (burn-in acceptance ",
                                          n_burn ? static_cast<double>(accepted_burn) / static_cast<double>(n_burn) : 0.0,
                                          ", proposal scale ", std::exp(log_c), ")"));
  chain.acceptance_rate = {acc};
  chain.proposal_scale = std::exp(log_c);
  return chain;
}

// Runs sample_beta on each design (one per imputed path) and concatenates the kept
// draws in input order. Chain k uses derive_seed(seed, k).
inline McmcChain composition_sample(const std::vector<DesignData>& designs, const BetaPrior& prior,
                                    const McmcOptions& opt, std::uint64_t seed, std::size_t threads = 1) {
  if (designs.empty()) throw DomainError("composition_sample: no designs");
  std::vector<McmcChain> chains(designs.size());
  parallel_for(designs.size(), threads,
               [&](std::size_t k) { chains[k] = sample_beta(designs[k], prior, opt, derive_seed(seed, k)); });
  McmcChain out;
  out.names = chains.front().names;
  out.seed = seed;
  Eigen::Index rows = 0;
  for (const auto& c : chains) {
    if (c.names != out.names) throw DomainError("composition_sample: designs have different columns");
    rows += c.draws.rows();
  }
  const Eigen::Index p = chains.front().draws.cols();
  out.draws.resize(rows, p);
  const bool lap = chains.front().sigma2_draws.size() > 0;
  if (lap) out.sigma2_draws.resize(rows, p);
  Eigen::Index r = 0;
  double acc = 0.0, scale = 0.0;
  for (const auto& c : chains) {
    out.draws.middleRows(r, c.draws.rows()) = c.draws;
    if (lap) out.sigma2_draws.middleRows(r, c.draws.rows()) = c.sigma2_draws;
    r += c.draws.rows();
    acc += c.acceptance_rate.front();
    scale += c.proposal_scale;
  }
  out.acceptance_rate = {acc / static_cast<double>(chains.size())};
  out.proposal_scale = scale / static_cast<double>(chains.size());
  return out;
}

}  // namespace ctds
