#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "ctds/design.hpp"
#include "ctds/error.hpp"

namespace ctds {

struct LoglikResult {
  double value = 0.0;
  Eigen::VectorXd gradient;
};

namespace detail {

inline constexpr double kMaxEta = 700.0;

// eta = offset + X beta, with the overflow guard.
inline Eigen::VectorXd linear_predictor(const DesignData& d, const Eigen::VectorXd& beta) {
  if (beta.size() != d.n_cols())
    throw DomainError(detail::concat("beta has ", beta.size(), " entries, design has ", d.n_cols(), " columns"));
  Eigen::VectorXd eta = d.offset + d.X * beta;
  for (Eigen::Index i = 0; i < eta.size(); ++i)
    if (!(eta[i] <= kMaxEta))
      throw NumericError(detail::concat("linear predictor ", eta[i], " exceeds ", kMaxEta, " at design row ", i));
  return eta;
}

inline double loglik_from_eta(const DesignData& d, const Eigen::VectorXd& eta, const Eigen::VectorXd& mu) {
  return (d.weight.array() * (d.z.array() * eta.array() - mu.array())).sum();
}

}  // namespace detail

// Poisson log-likelihood sum w (z eta - exp(eta)), eta = offset + X beta, and its gradient.
inline LoglikResult poisson_loglik(const DesignData& d, const Eigen::VectorXd& beta) {
  const Eigen::VectorXd eta = detail::linear_predictor(d, beta);
  const Eigen::VectorXd mu = eta.array().exp().matrix();
  LoglikResult r;
  r.value = detail::loglik_from_eta(d, eta, mu);
  r.gradient = d.X.transpose() * (d.weight.array() * (d.z.array() - mu.array())).matrix();
  return r;
}

struct GlmFit {
  std::vector<std::string> names;
  Eigen::VectorXd beta_hat;
  Eigen::MatrixXd covariance;  // inverse Fisher information at beta_hat
  double loglik = 0.0;
  bool converged = false;
  int n_iter = 0;

  Eigen::VectorXd standard_errors() const { return covariance.diagonal().cwiseMax(0.0).cwiseSqrt(); }
};

struct IrlsOptions {
  double rel_tol = 1e-10;
  int max_iter = 100;
};

namespace detail {

// Throws naming a column that is linearly dependent on the others in sqrt(W) X.
inline void check_rank(const DesignData& d, const Eigen::VectorXd& mu) {
  const Eigen::VectorXd sw = (d.weight.array() * mu.array()).sqrt().matrix();
  const Eigen::MatrixXd A = sw.asDiagonal() * d.X;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
  qr.setThreshold(1e-10);
  if (qr.rank() < A.cols()) {
    const auto col = qr.colsPermutation().indices()[qr.rank()];
    throw NumericError(detail::concat("design is rank deficient: column '", d.column_names[static_cast<std::size_t>(col)],
                                      "' is linearly dependent on the others"));
  }
}

// Starting point: if some combination c of columns reproduces the constant 1,
// put the intercept-only MLE log(sum z / sum exp(offset)) along c.
inline Eigen::VectorXd constant_start(const DesignData& d, const std::vector<bool>* mask = nullptr) {
  const Eigen::Index p = d.n_cols();
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
  std::vector<Eigen::Index> cols;
  for (Eigen::Index j = 0; j < p; ++j)
    if (!mask || (*mask)[static_cast<std::size_t>(j)]) cols.push_back(j);
  if (cols.empty() || d.n_rows() == 0) return beta;
  Eigen::MatrixXd A(d.n_rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t k = 0; k < cols.size(); ++k) A.col(static_cast<Eigen::Index>(k)) = d.X.col(cols[k]);
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(d.n_rows());
  const Eigen::VectorXd c = A.colPivHouseholderQr().solve(ones);
  if (!c.allFinite() || (A * c - ones).lpNorm<Eigen::Infinity>() > 1e-8) return beta;
  const double zs = (d.weight.array() * d.z.array()).sum();
  const double es = (d.weight.array() * d.offset.array().exp()).sum();
  if (!(zs > 0.0) || !(es > 0.0)) return beta;
  const double level = std::log(zs / es);
  for (std::size_t k = 0; k < cols.size(); ++k) beta[cols[k]] = level * c[static_cast<Eigen::Index>(k)];
  return beta;
}

}  // namespace detail

// Fisher scoring (Newton, canonical link) with step halving.
inline GlmFit fit_irls(const DesignData& d, const IrlsOptions& opt = {}) {
  d.validate();
  if (!((d.weight.array() * d.z.array()).sum() > 0.0)) throw DomainError("fit_irls: design has no z = 1 rows");
  const Eigen::Index p = d.n_cols();
  GlmFit fit;
  fit.names = d.column_names;
  Eigen::VectorXd beta = detail::constant_start(d);
  Eigen::VectorXd eta = detail::linear_predictor(d, beta);
  Eigen::VectorXd mu = eta.array().exp().matrix();
  double ll = detail::loglik_from_eta(d, eta, mu);
  detail::check_rank(d, mu);

  std::vector<double> trace{ll};
  bool converged = false;
  int iter = 0;
  for (; iter < opt.max_iter && !converged; ++iter) {
    const Eigen::VectorXd wmu = (d.weight.array() * mu.array()).matrix();
    const Eigen::VectorXd score = d.X.transpose() * (d.weight.array() * (d.z.array() - mu.array())).matrix();
    const Eigen::MatrixXd H = d.X.transpose() * wmu.asDiagonal() * d.X;
    Eigen::LLT<Eigen::MatrixXd> llt(H);
    if (llt.info() != Eigen::Success) {
      detail::check_rank(d, mu);
      throw NumericError("fit_irls: Fisher information is not positive definite");
    }
    const Eigen::VectorXd step = llt.solve(score);
    double t = 1.0;
    bool accepted = false;
    Eigen::VectorXd nb, neta, nmu;
    double nll = -std::numeric_limits<double>::infinity();
    for (int h = 0; h < 40; ++h, t *= 0.5) {
      nb = beta + t * step;
      try {
        neta = detail::linear_predictor(d, nb);
      } catch (const NumericError&) {
        continue;
      }
      nmu = neta.array().exp().matrix();
      nll = detail::loglik_from_eta(d, neta, nmu);
      if (std::isfinite(nll) && nll >= ll - 1e-12 * std::abs(ll)) {
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
    const double change = std::abs(nll - ll) / (std::abs(nll) + 0.1);
    beta = nb;
    eta = neta;
    mu = nmu;
    ll = nll;
    trace.push_back(ll);
    if (change < opt.rel_tol && (t * step).lpNorm<Eigen::Infinity>() < 1e-6) converged = true;
  }
  if (!converged) {
    std::string tail;
    for (std::size_t i = trace.size() > 5 ? trace.size() - 5 : 0; i < trace.size(); ++i)
      tail += detail::concat(i ? " " : "", trace[i]);
    throw ConvergenceError(detail::concat("fit_irls did not converge in ", iter, " iterations; loglik trace: ", tail));
  }
  const Eigen::VectorXd wmu = (d.weight.array() * mu.array()).matrix();
  const Eigen::MatrixXd H = d.X.transpose() * wmu.asDiagonal() * d.X;
  Eigen::LLT<Eigen::MatrixXd> llt(H);
  if (llt.info() != Eigen::Success) {
    detail::check_rank(d, mu);
    throw NumericError("fit_irls: Fisher information is singular at the optimum");
  }
  fit.beta_hat = beta;
  fit.covariance = llt.solve(Eigen::MatrixXd::Identity(p, p));
  fit.covariance = 0.5 * (fit.covariance + fit.covariance.transpose());
  fit.loglik = ll;
  fit.converged = true;
  fit.n_iter = iter;
  return fit;
}

// Poisson deviance 2 sum w [z log(z/mu) - (z - mu)] for z in {0, 1}.
inline double poisson_deviance(const DesignData& d, const Eigen::VectorXd& beta) {
  const Eigen::VectorXd eta = detail::linear_predictor(d, beta);
  double dev = 0.0;
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    const double mu = std::exp(eta[i]);
    const double zi = d.z[i];
    dev += d.weight[i] * ((zi > 0.0 ? zi * (std::log(zi) - eta[i]) : 0.0) - (zi - mu));
  }
  return 2.0 * dev;
}

// Keeps rows of the listed blocks (in the given order).
inline DesignData select_blocks(const DesignData& d, const std::vector<std::size_t>& blocks) {
  std::size_t n = 0;
  for (auto b : blocks) n += d.block_start[b + 1] - d.block_start[b];
  DesignData out;
  const auto rows = static_cast<Eigen::Index>(n);
  out.X.resize(rows, d.n_cols());
  out.z.resize(rows);
  out.offset.resize(rows);
  out.weight.resize(rows);
  out.row_block.reserve(n);
  out.row_dir.reserve(n);
  out.column_names = d.column_names;
  out.column_groups = d.column_groups;
  out.penalized = d.penalized;
  out.block_start.push_back(0);
  Eigen::Index r = 0;
  for (std::size_t k = 0; k < blocks.size(); ++k) {
    const auto b = blocks[k];
    const auto lo = static_cast<Eigen::Index>(d.block_start[b]);
    const auto len = static_cast<Eigen::Index>(d.block_start[b + 1]) - lo;
    out.X.middleRows(r, len) = d.X.middleRows(lo, len);
    out.z.segment(r, len) = d.z.segment(lo, len);
    out.offset.segment(r, len) = d.offset.segment(lo, len);
    out.weight.segment(r, len) = d.weight.segment(lo, len);
    for (Eigen::Index i = 0; i < len; ++i) {
      out.row_block.push_back(k);
      out.row_dir.push_back(d.row_dir[static_cast<std::size_t>(lo + i)]);
    }
    r += len;
    out.block_start.push_back(static_cast<std::size_t>(r));
    out.block_time.push_back(d.block_time[b]);
    out.block_source.push_back(d.block_source[b]);
  }
  return out;
}

// Discrete-time residence density: stay tau/dt steps with probability 1 - lambda dt
// each, then leave, per unit dt. Tends to lambda exp(-lambda tau) as dt -> 0.
inline double discrete_time_residence_density(double lambda, double tau, double dt) {
  if (!(lambda > 0.0) || !(tau > 0.0) || !(dt > 0.0) || !(lambda * dt < 1.0))
    throw DomainError(detail::concat("discrete-time density needs lambda, tau, dt > 0 and lambda dt < 1 (got ", lambda,
                                     ", ", tau, ", ", dt, ")"));
  return lambda * std::exp(tau / dt * std::log1p(-lambda * dt));
}

}  // namespace ctds
