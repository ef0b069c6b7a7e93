#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "ctds/design.hpp"
#include "ctds/error.hpp"
#include "ctds/glm.hpp"
#include "ctds/parallel.hpp"
#include "ctds/rng.hpp"

namespace ctds {

struct CvCurve {
  std::vector<double> gammas;
  std::vector<double> mean_deviance;  // per held-out block, averaged over folds
  std::vector<double> sd_deviance;    // standard error across folds
  std::size_t index_min = 0;
  std::size_t index_1se = 0;
};

struct LassoFit {
  std::vector<std::string> names;
  Eigen::VectorXd beta_hat;  // original column scale
  double penalty = 0.0;      // gamma_lasso
  double gamma_max = 0.0;
  std::vector<std::size_t> active_set;  // penalized columns with nonzero coefficients
  double loglik = 0.0;
  double kkt_residual = 0.0;
  int n_iter = 0;
  std::optional<CvCurve> cv_curve;
};

struct LassoOptions {
  double tol = 1e-13;  // relative change of the penalized objective
  int max_outer = 200;
  int max_sweeps = 100000;
};

// Column scales used by the penalty: standard deviation of each column under
// weights w * exp(offset). Unpenalized or constant columns get scale 1.
inline Eigen::VectorXd lasso_scales(const DesignData& d) {
  const Eigen::ArrayXd wt = d.weight.array() * d.offset.array().exp();
  const double total = wt.sum();
  Eigen::VectorXd s = Eigen::VectorXd::Ones(d.n_cols());
  if (!(total > 0.0)) return s;
  for (Eigen::Index j = 0; j < d.n_cols(); ++j) {
    if (!d.penalized[static_cast<std::size_t>(j)]) continue;
    const double m = (wt * d.X.col(j).array()).sum() / total;
    const double v = (wt * (d.X.col(j).array() - m).square()).sum() / total;
    if (v > 1e-24) s[j] = std::sqrt(v);
  }
  return s;
}

// KKT violation on the standardized scale: for zero penalized coefficients
// max(0, |g_j|/s_j - gamma); for active ones |g_j/s_j - gamma sign(b_j)|; |g_j| for unpenalized.
inline double lasso_kkt_residual(const DesignData& d, const Eigen::VectorXd& beta, double gamma,
                                 const Eigen::VectorXd& scales) {
  const auto g = poisson_loglik(d, beta).gradient;
  double worst = 0.0;
  for (Eigen::Index j = 0; j < g.size(); ++j) {
    double r = 0.0;
    if (!d.penalized[static_cast<std::size_t>(j)]) {
      r = std::abs(g[j]);
    } else if (beta[j] == 0.0) {
      r = std::max(0.0, std::abs(g[j]) / scales[j] - gamma);
    } else {
      r = std::abs(g[j] / scales[j] - gamma * (beta[j] > 0.0 ? 1.0 : -1.0));
    }
    worst = std::max(worst, r);
  }
  return worst;
}

inline double lasso_kkt_residual(const DesignData& d, const Eigen::VectorXd& beta, double gamma) {
  return lasso_kkt_residual(d, beta, gamma, lasso_scales(d));
}

namespace detail {

inline double soft_threshold(double x, double t) {
  if (x > t) return x - t;
  if (x < -t) return x + t;
  return 0.0;
}

struct NullModel {
  Eigen::VectorXd beta;
  Eigen::VectorXd gradient;
};

// Maximizer over the unpenalized columns with penalized ones held at zero.
inline NullModel null_model(const DesignData& d) {
  NullModel nm;
  nm.beta = Eigen::VectorXd::Zero(d.n_cols());
  std::vector<Eigen::Index> free;
  for (Eigen::Index j = 0; j < d.n_cols(); ++j)
    if (!d.penalized[static_cast<std::size_t>(j)]) free.push_back(j);
  if (!free.empty()) {
    DesignData sub;
    sub.X.resize(d.n_rows(), static_cast<Eigen::Index>(free.size()));
    for (std::size_t k = 0; k < free.size(); ++k) {
      sub.X.col(static_cast<Eigen::Index>(k)) = d.X.col(free[k]);
      sub.column_names.push_back(d.column_names[static_cast<std::size_t>(free[k])]);
      sub.column_groups.push_back(d.column_groups[static_cast<std::size_t>(free[k])]);
      sub.penalized.push_back(false);
    }
    sub.z = d.z;
    sub.offset = d.offset;
    sub.weight = d.weight;
    sub.row_block = d.row_block;
    sub.row_dir = d.row_dir;
    sub.block_start = d.block_start;
    sub.block_time = d.block_time;
    sub.block_source = d.block_source;
    const GlmFit f = fit_irls(sub);
    for (std::size_t k = 0; k < free.size(); ++k) nm.beta[free[k]] = f.beta_hat[static_cast<Eigen::Index>(k)];
  }
  nm.gradient = poisson_loglik(d, nm.beta).gradient;
  return nm;
}

inline double gamma_max_from(const DesignData& d, const NullModel& nm, const Eigen::VectorXd& scales) {
  double gmax = 0.0;
  for (Eigen::Index j = 0; j < d.n_cols(); ++j)
    if (d.penalized[static_cast<std::size_t>(j)]) gmax = std::max(gmax, std::abs(nm.gradient[j]) / scales[j]);
  return gmax;
}

inline double penalized_objective(const DesignData& d, const Eigen::VectorXd& beta, const Eigen::VectorXd& lambda,
                                  double& ll) {
  const Eigen::VectorXd eta = linear_predictor(d, beta);
  const Eigen::VectorXd mu = eta.array().exp().matrix();
  ll = loglik_from_eta(d, eta, mu);
  return ll - (lambda.array() * beta.array().abs()).sum();
}

}  // namespace detail

// Largest penalty with a nonzero penalized coefficient: max_j |score_j| / s_j at the null model.
inline double lasso_gamma_max(const DesignData& d) {
  d.validate();
  return detail::gamma_max_from(d, detail::null_model(d), lasso_scales(d));
}

namespace detail {

// Proximal Newton: quadratic model from the exact Fisher information, solved by
// cyclic coordinate descent with soft thresholding, then a backtracking step on the
// penalized objective.
inline LassoFit fit_lasso_impl(const DesignData& d, double gamma, const Eigen::VectorXd& scales, const NullModel& nm,
                               double gmax, const Eigen::VectorXd* warm, const LassoOptions& opt) {
  const Eigen::Index p = d.n_cols();
  LassoFit fit;
  fit.names = d.column_names;
  fit.penalty = gamma;
  fit.gamma_max = gmax;
  Eigen::VectorXd lambda(p);
  for (Eigen::Index j = 0; j < p; ++j) lambda[j] = d.penalized[static_cast<std::size_t>(j)] ? gamma * scales[j] : 0.0;

  if (gamma >= gmax) {
    fit.beta_hat = nm.beta;
  } else {
    Eigen::VectorXd b = warm ? *warm : nm.beta;
    double ll = 0.0;
    double F = -std::numeric_limits<double>::infinity();
    try {
      F = penalized_objective(d, b, lambda, ll);
    } catch (const NumericError&) {
      b = nm.beta;
      F = penalized_objective(d, b, lambda, ll);
    }
    bool converged = false;
    int outer = 0;
    for (; outer < opt.max_outer && !converged; ++outer) {
      const Eigen::VectorXd eta = linear_predictor(d, b);
      const Eigen::ArrayXd mu = eta.array().exp();
      const Eigen::VectorXd g = d.X.transpose() * (d.weight.array() * (d.z.array() - mu)).matrix();
      const Eigen::VectorXd wmu = (d.weight.array() * mu).matrix();
      const Eigen::MatrixXd H = d.X.transpose() * wmu.asDiagonal() * d.X;

      // Inner problem: max g'(nb - b) - 1/2 (nb - b)' H (nb - b) - sum lambda |nb|.
      Eigen::VectorXd nb = b;
      Eigen::VectorXd Hd = Eigen::VectorXd::Zero(p);  // H (nb - b)
      for (int sweep = 0; sweep < opt.max_sweeps; ++sweep) {
        double max_change = 0.0;
        for (Eigen::Index j = 0; j < p; ++j) {
          const double hjj = H(j, j);
          if (!(hjj > 0.0)) continue;
          const double c = g[j] - Hd[j] + hjj * (nb[j] - b[j]);
          const double v = soft_threshold(hjj * b[j] + c, lambda[j]) / hjj;
          const double delta = v - nb[j];
          if (delta != 0.0) {
            Hd += delta * H.col(j);
            nb[j] = v;
            max_change = std::max(max_change, std::abs(delta) * std::sqrt(hjj));
          }
        }
        if (max_change < 1e-13) break;
      }
      const Eigen::VectorXd dir = nb - b;
      if (dir.lpNorm<Eigen::Infinity>() == 0.0) {
        converged = true;
        break;
      }
      double t = 1.0, nll = 0.0, nF = -std::numeric_limits<double>::infinity();
      Eigen::VectorXd cand;
      bool accepted = false;
      for (int h = 0; h < 50; ++h, t *= 0.5) {
        cand = b + t * dir;
        try {
          nF = penalized_objective(d, cand, lambda, nll);
        } catch (const NumericError&) {
          continue;
        }
        if (nF >= F - 1e-14 * std::abs(F)) {
          accepted = true;
          break;
        }
      }
      if (!accepted) break;
      const double change = std::abs(nF - F) / (std::abs(nF) + 1e-12);
      const double step = (t * dir).lpNorm<Eigen::Infinity>();
      b = cand;
      F = nF;
      ll = nll;
      if (change < opt.tol && step < 1e-9) converged = true;
    }
    fit.beta_hat = b;
    fit.n_iter = outer;
  }
  fit.loglik = poisson_loglik(d, fit.beta_hat).value;
  for (Eigen::Index j = 0; j < p; ++j)
    if (d.penalized[static_cast<std::size_t>(j)] && fit.beta_hat[j] != 0.0) fit.active_set.push_back(static_cast<std::size_t>(j));
  fit.kkt_residual = lasso_kkt_residual(d, fit.beta_hat, gamma, scales);
  return fit;
}

}  // namespace detail

// L1-penalized maximum likelihood, penalty gamma * sum_j s_j |beta_j| over penalized
// columns (equivalently gamma * |.|_1 on unit-variance columns). Intercept columns are free.
inline LassoFit fit_lasso(const DesignData& d, double gamma_lasso, const LassoOptions& opt = {},
                          const Eigen::VectorXd* warm_start = nullptr) {
  d.validate();
  if (!(gamma_lasso >= 0.0)) throw DomainError(detail::concat("gamma_lasso must be >= 0, got ", gamma_lasso));
  if (!((d.weight.array() * d.z.array()).sum() > 0.0)) throw DomainError("fit_lasso: design has no z = 1 rows");
  if (gamma_lasso == 0.0) detail::check_rank(d, d.offset.array().exp().matrix());
  const Eigen::VectorXd scales = lasso_scales(d);
  const auto nm = detail::null_model(d);
  const double gmax = detail::gamma_max_from(d, nm, scales);
  return detail::fit_lasso_impl(d, gamma_lasso, scales, nm, gmax, warm_start, opt);
}

// glmnet-style grid: n points log-spaced from gamma_max down to ratio * gamma_max.
inline std::vector<double> default_gamma_grid(double gamma_max, std::size_t n = 50, double ratio = 1e-3) {
  std::vector<double> g(n);
  if (n == 1) return {gamma_max};
  for (std::size_t i = 0; i < n; ++i)
    g[i] = gamma_max * std::pow(ratio, static_cast<double>(i) / static_cast<double>(n - 1));
  return g;
}

// Fits a decreasing gamma sequence with warm starts.
inline std::vector<LassoFit> lasso_path(const DesignData& d, std::vector<double> gammas, const LassoOptions& opt = {}) {
  d.validate();
  std::sort(gammas.begin(), gammas.end(), std::greater<>());
  const Eigen::VectorXd scales = lasso_scales(d);
  const auto nm = detail::null_model(d);
  const double gmax = detail::gamma_max_from(d, nm, scales);
  std::vector<LassoFit> out;
  out.reserve(gammas.size());
  for (double g : gammas) {
    const Eigen::VectorXd* warm = out.empty() ? nullptr : &out.back().beta_hat;
    out.push_back(detail::fit_lasso_impl(d, g, scales, nm, gmax, warm, opt));
  }
  return out;
}

// Soft diagnostic: number of grid steps (in decreasing gamma) where the active set shrinks.
inline std::size_t active_set_monotonicity_violations(const std::vector<LassoFit>& path) {
  std::size_t v = 0;
  for (std::size_t i = 1; i < path.size(); ++i)
    if (path[i].active_set.size() < path[i - 1].active_set.size()) ++v;
  return v;
}

enum class CvRule { Min, OneSe };

struct CvOptions {
  CvRule rule = CvRule::Min;
  std::size_t threads = 1;
  // > 0: blocks whose entry times fall in the same window of this many seconds share a
  // fold, so stacked imputations of one stretch of track are never split across folds.
  double group_seconds = 0.0;
  LassoOptions lasso{};
};

namespace detail {

// Block -> group id: the block itself, or its time window.
inline std::vector<std::size_t> cv_groups(const DesignData& d, double group_seconds, std::size_t& n_groups) {
  std::vector<std::size_t> g(d.n_blocks());
  if (!(group_seconds > 0.0) || d.n_blocks() == 0) {
    std::iota(g.begin(), g.end(), 0);
    n_groups = g.size();
    return g;
  }
  const double t0 = *std::min_element(d.block_time.begin(), d.block_time.end());
  std::vector<long long> key(d.n_blocks());
  for (std::size_t b = 0; b < d.n_blocks(); ++b)
    key[b] = static_cast<long long>(std::floor((d.block_time[b] - t0) / group_seconds));
  std::vector<long long> uniq = key;
  std::sort(uniq.begin(), uniq.end());
  uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
  for (std::size_t b = 0; b < d.n_blocks(); ++b)
    g[b] = static_cast<std::size_t>(std::lower_bound(uniq.begin(), uniq.end(), key[b]) - uniq.begin());
  n_groups = uniq.size();
  return g;
}

// Groups are shuffled and dealt round-robin so fold sizes differ by at most one group.
inline std::vector<std::size_t> assign_folds(const std::vector<std::size_t>& group, std::size_t n_groups,
                                             std::size_t n_folds, Rng& rng) {
  std::vector<std::size_t> perm(n_groups);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<std::size_t> group_fold(n_groups);
  for (std::size_t i = 0; i < n_groups; ++i) group_fold[perm[i]] = i % n_folds;
  std::vector<std::size_t> fold(group.size());
  for (std::size_t b = 0; b < group.size(); ++b) fold[b] = group_fold[group[b]];
  return fold;
}

inline bool folds_have_events(const DesignData& d, const std::vector<std::size_t>& fold, std::size_t n_folds) {
  std::vector<bool> has(n_folds, false);
  for (std::size_t b = 0; b < d.n_blocks(); ++b)
    for (std::size_t r = d.block_start[b]; r < d.block_start[b + 1]; ++r)
      if (d.z[static_cast<Eigen::Index>(r)] > 0.0) has[fold[b]] = true;
  return std::all_of(has.begin(), has.end(), [](bool x) { return x; });
}

}  // namespace detail

// K-fold cross-validation over transition blocks; picks gamma by held-out Poisson
// deviance and refits on all data.
inline LassoFit cv_lasso(const DesignData& d, std::size_t n_folds, std::vector<double> gamma_grid, std::uint64_t seed,
                         const CvOptions& opt = {}) {
  d.validate();
  if (n_folds < 2) throw DomainError(detail::concat("cv_lasso: n_folds must be >= 2, got ", n_folds));
  std::size_t n_groups = 0;
  const auto group = detail::cv_groups(d, opt.group_seconds, n_groups);
  if (n_groups < n_folds)
    throw DomainError(detail::concat("cv_lasso: ", n_groups, " transition groups cannot fill ", n_folds, " folds"));
  if (gamma_grid.empty()) gamma_grid = default_gamma_grid(lasso_gamma_max(d));
  std::sort(gamma_grid.begin(), gamma_grid.end(), std::greater<>());

  Rng rng(seed);
  auto fold = detail::assign_folds(group, n_groups, n_folds, rng);
  if (!detail::folds_have_events(d, fold, n_folds)) {
    fold = detail::assign_folds(group, n_groups, n_folds, rng);
    if (!detail::folds_have_events(d, fold, n_folds))
      throw DomainError("cv_lasso: a fold has no z = 1 rows after re-randomizing");
  }

  const std::size_t G = gamma_grid.size();
  std::vector<std::vector<double>> dev(n_folds, std::vector<double>(G, 0.0));
  parallel_for(n_folds, opt.threads, [&](std::size_t f) {
    std::vector<std::size_t> train, test;
    for (std::size_t b = 0; b < d.n_blocks(); ++b) (fold[b] == f ? test : train).push_back(b);
    const DesignData dtrain = select_blocks(d, train);
    const DesignData dtest = select_blocks(d, test);
    const auto path = lasso_path(dtrain, gamma_grid, opt.lasso);
    const double test_weight = [&] {
      double s = 0.0;
      for (std::size_t b = 0; b < dtest.n_blocks(); ++b) s += dtest.weight[static_cast<Eigen::Index>(dtest.block_start[b])];
      return s;
    }();
    for (std::size_t g = 0; g < G; ++g) dev[f][g] = poisson_deviance(dtest, path[g].beta_hat) / test_weight;
  });

  CvCurve curve;
  curve.gammas = gamma_grid;
  curve.mean_deviance.resize(G);
  curve.sd_deviance.resize(G);
  for (std::size_t g = 0; g < G; ++g) {
    double m = 0.0;
    for (std::size_t f = 0; f < n_folds; ++f) m += dev[f][g];
    m /= static_cast<double>(n_folds);
    double v = 0.0;
    for (std::size_t f = 0; f < n_folds; ++f) v += (dev[f][g] - m) * (dev[f][g] - m);
    v /= static_cast<double>(n_folds - 1);
    curve.mean_deviance[g] = m;
    curve.sd_deviance[g] = std::sqrt(v / static_cast<double>(n_folds));
  }
  curve.index_min = static_cast<std::size_t>(
      std::min_element(curve.mean_deviance.begin(), curve.mean_deviance.end()) - curve.mean_deviance.begin());
  const double bound = curve.mean_deviance[curve.index_min] + curve.sd_deviance[curve.index_min];
  curve.index_1se = curve.index_min;
  for (std::size_t g = 0; g < curve.index_min; ++g)
    if (curve.mean_deviance[g] <= bound) {
      curve.index_1se = g;
      break;
    }
  const std::size_t chosen = opt.rule == CvRule::Min ? curve.index_min : curve.index_1se;

  // Refit along the grid down to the chosen penalty for warm starts.
  std::vector<double> head(gamma_grid.begin(), gamma_grid.begin() + static_cast<std::ptrdiff_t>(chosen) + 1);
  auto full = lasso_path(d, head, opt.lasso);
  LassoFit fit = std::move(full.back());
  fit.cv_curve = std::move(curve);
  return fit;
}

}  // namespace ctds
