#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "ctds/error.hpp"
#include "ctds/grid.hpp"
#include "ctds/optimize.hpp"
#include "ctds/rng.hpp"

namespace ctds {

// Time-stamped planar telemetry fixes (seconds, meters).
struct Track {
  std::string id;
  std::vector<double> times;
  std::vector<Point> positions;

  std::size_t size() const { return times.size(); }

  void validate() const {
    if (times.size() != positions.size())
      throw DomainError(detail::concat("track '", id, "': ", times.size(), " times but ", positions.size(), " positions"));
    if (times.size() < 2) throw DomainError(detail::concat("track '", id, "' needs at least 2 fixes"));
    for (std::size_t i = 0; i < times.size(); ++i) {
      if (!std::isfinite(times[i]) || !std::isfinite(positions[i].x) || !std::isfinite(positions[i].y))
        throw DomainError(detail::concat("track '", id, "': non-finite fix at index ", i));
      if (i > 0 && !(times[i] > times[i - 1]))
        throw DomainError(detail::concat("track '", id, "': times not strictly increasing at index ", i));
    }
  }
};

// Integrated Ornstein-Uhlenbeck velocity model, dv = gamma (mu - v) dt + sigma dW,
// observed as position plus N(0, obs_sd^2) noise on each axis.
struct CtcrwParams {
  double gamma_ou = 1e-3;  // 1/s
  double sigma_ou = 1.0;
  Point mu{};              // m/s
  double obs_sd = 0.0;     // m

  void validate() const {
    if (!(gamma_ou > 0.0) || !std::isfinite(gamma_ou))
      throw DomainError(detail::concat("gamma_ou must be positive, got ", gamma_ou));
    if (!(sigma_ou > 0.0) || !std::isfinite(sigma_ou))
      throw DomainError(detail::concat("sigma_ou must be positive, got ", sigma_ou));
    if (!(obs_sd >= 0.0) || !std::isfinite(obs_sd))
      throw DomainError(detail::concat("obs_sd must be nonnegative, got ", obs_sd));
    if (!std::isfinite(mu.x) || !std::isfinite(mu.y)) throw DomainError("mu must be finite");
  }
};

// Per-axis exact discretization over an interval delta: state (position, velocity)
// evolves as x' = T x + mu_axis * drift + N(0, Q).
struct OuTransition {
  Eigen::Matrix2d T;
  Eigen::Matrix2d Q;
  Eigen::Vector2d drift;
};

inline OuTransition ou_transition(const CtcrwParams& params, double delta) {
  if (!(delta > 0.0)) throw DomainError(detail::concat("ou_transition: delta must be positive, got ", delta));
  const double g = params.gamma_ou, s2 = params.sigma_ou * params.sigma_ou;
  const double x = g * delta;
  const double one_minus_e = -std::expm1(-x);        // 1 - e^{-g delta}
  const double one_minus_e2 = -std::expm1(-2.0 * x);  // 1 - e^{-2 g delta}
  // x - 2(1 - e^{-x}) + (1 - e^{-2x})/2 cancels to O(x^3); use its series for small x.
  double pp_core = 0.0;
  if (x < 1e-3) {
    pp_core = x * x * x * (1.0 / 3.0 + x * (-0.25 + x * (7.0 / 60.0 + x * (-1.0 / 24.0 + x * 31.0 / 2520.0))));
  } else {
    pp_core = x - 2.0 * one_minus_e + 0.5 * one_minus_e2;
  }
  OuTransition tr;
  tr.T << 1.0, one_minus_e / g, 0.0, 1.0 - one_minus_e;
  const double qvv = s2 * one_minus_e2 / (2.0 * g);
  const double qpv = s2 * one_minus_e * one_minus_e / (2.0 * g * g);
  const double qpp = s2 * pp_core / (g * g * g);
  tr.Q << qpp, qpv, qpv, qvv;
  double drift_p = 0.0;
  if (x < 1e-3) {
    drift_p = delta * x * (0.5 + x * (-1.0 / 6.0 + x / 24.0));  // delta - (1 - e^{-x})/g
  } else {
    drift_p = delta - one_minus_e / g;
  }
  tr.drift << drift_p, one_minus_e;
  return tr;
}

namespace detail {

inline constexpr double kPriorPositionVariance = 1e6;

struct AxisModel {
  double gamma = 0.0;
  double sigma = 0.0;
  double mu = 0.0;
  double obs_var = 0.0;
};

struct AxisFilter {
  std::vector<Eigen::Vector2d> m_pred, m_filt;
  std::vector<Eigen::Matrix2d> P_pred, P_filt;
  std::vector<Eigen::Matrix2d> T;  // T[k]: transition into step k (k >= 1)
  std::vector<Eigen::Vector2d> c;
  double loglik = 0.0;
};

inline Eigen::Vector2d prior_mean(const AxisModel& m, double first_obs) { return {first_obs, m.mu}; }

inline Eigen::Matrix2d prior_cov(const AxisModel& m) {
  Eigen::Matrix2d P = Eigen::Matrix2d::Zero();
  P(0, 0) = kPriorPositionVariance;
  P(1, 1) = m.sigma * m.sigma / (2.0 * m.gamma);
  return P;
}

// Kalman filter on a time grid; obs[k] is NaN where no observation exists.
inline AxisFilter run_filter(const AxisModel& m, const std::vector<double>& times, const std::vector<double>& obs,
                             double prior_position) {
  const std::size_t n = times.size();
  AxisFilter f;
  f.m_pred.resize(n);
  f.m_filt.resize(n);
  f.P_pred.resize(n);
  f.P_filt.resize(n);
  f.T.resize(n, Eigen::Matrix2d::Identity());
  f.c.resize(n, Eigen::Vector2d::Zero());
  CtcrwParams p;
  p.gamma_ou = m.gamma;
  p.sigma_ou = m.sigma;
  constexpr double kLog2Pi = 1.8378770664093453;
  for (std::size_t k = 0; k < n; ++k) {
    if (k == 0) {
      f.m_pred[0] = prior_mean(m, prior_position);
      f.P_pred[0] = prior_cov(m);
    } else {
      const auto tr = ou_transition(p, times[k] - times[k - 1]);
      f.T[k] = tr.T;
      f.c[k] = m.mu * tr.drift;
      f.m_pred[k] = tr.T * f.m_filt[k - 1] + f.c[k];
      f.P_pred[k] = tr.T * f.P_filt[k - 1] * tr.T.transpose() + tr.Q;
    }
    if (std::isnan(obs[k])) {
      f.m_filt[k] = f.m_pred[k];
      f.P_filt[k] = f.P_pred[k];
      continue;
    }
    const double S = f.P_pred[k](0, 0) + m.obs_var;
    const double resid = obs[k] - f.m_pred[k](0);
    f.loglik += -0.5 * (kLog2Pi + std::log(S) + resid * resid / S);
    const Eigen::Vector2d K = f.P_pred[k].col(0) / S;
    f.m_filt[k] = f.m_pred[k] + K * resid;
    Eigen::Matrix2d P = f.P_pred[k] - K * f.P_pred[k].row(0);
    P(0, 1) = P(1, 0) = 0.5 * (P(0, 1) + P(1, 0));
    f.P_filt[k] = P;
  }
  return f;
}

struct AxisSmooth {
  std::vector<Eigen::Vector2d> mean;
  std::vector<Eigen::Matrix2d> cov;
};

// Rauch-Tung-Striebel backward pass.
inline AxisSmooth run_smoother(const AxisFilter& f, bool with_cov) {
  const std::size_t n = f.m_filt.size();
  AxisSmooth s;
  s.mean.resize(n);
  if (with_cov) s.cov.resize(n);
  s.mean[n - 1] = f.m_filt[n - 1];
  Eigen::Matrix2d Ps = f.P_filt[n - 1];
  if (with_cov) s.cov[n - 1] = Ps;
  for (std::size_t k = n - 1; k-- > 0;) {
    // J = P_filt[k] T' P_pred[k+1]^{-1}
    const Eigen::Matrix2d J =
        f.P_pred[k + 1].ldlt().solve(f.T[k + 1] * f.P_filt[k]).transpose();
    s.mean[k] = f.m_filt[k] + J * (s.mean[k + 1] - f.m_pred[k + 1]);
    if (with_cov) {
      Ps = f.P_filt[k] + J * (Ps - f.P_pred[k + 1]) * J.transpose();
      Ps(0, 1) = Ps(1, 0) = 0.5 * (Ps(0, 1) + Ps(1, 0));
      s.cov[k] = Ps;
    }
  }
  return s;
}

inline AxisModel axis_model(const CtcrwParams& p, int axis) {
  return {p.gamma_ou, p.sigma_ou, axis == 0 ? p.mu.x : p.mu.y, p.obs_sd * p.obs_sd};
}

inline std::vector<double> axis_obs(const Track& t, int axis) {
  std::vector<double> y(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) y[i] = axis == 0 ? t.positions[i].x : t.positions[i].y;
  return y;
}

// Fine grid t0 + k*delta merged with the fix times; grid points closer than
// delta/1000 to a fix are replaced by the fix. fix_index[i] is the grid position of fix i.
inline std::vector<double> merged_grid(const std::vector<double>& fix_times, double delta,
                                       std::vector<std::size_t>& fix_index) {
  const double t0 = fix_times.front(), t1 = fix_times.back();
  const double tol = 1e-3 * delta;
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>((t1 - t0) / delta) + fix_times.size() + 2);
  fix_index.assign(fix_times.size(), 0);
  std::size_t next_fix = 0;
  for (std::int64_t k = 0;; ++k) {
    const double tg = t0 + static_cast<double>(k) * delta;
    const bool past_end = tg > t1 - tol;
    while (next_fix < fix_times.size() && (past_end || fix_times[next_fix] <= tg + tol)) {
      fix_index[next_fix] = out.size();
      out.push_back(fix_times[next_fix]);
      ++next_fix;
    }
    if (past_end) break;
    if (tg > out.back() + tol) out.push_back(tg);
  }
  return out;
}

inline void check_finite_loglik(double ll, const CtcrwParams& p) {
  if (!std::isfinite(ll))
    throw NumericError(detail::concat("non-finite CTCRW log-likelihood at gamma_ou=", p.gamma_ou,
                                      " sigma_ou=", p.sigma_ou, " obs_sd=", p.obs_sd));
}

}  // namespace detail

// Exact Gaussian log-likelihood of the fixes; the two axes are independent.
inline double kalman_loglik(const Track& track, const CtcrwParams& params) {
  track.validate();
  params.validate();
  double ll = 0.0;
  for (int axis = 0; axis < 2; ++axis) {
    const auto y = detail::axis_obs(track, axis);
    ll += detail::run_filter(detail::axis_model(params, axis), track.times, y, y.front()).loglik;
  }
  detail::check_finite_loglik(ll, params);
  return ll;
}

struct CtcrwFit {
  CtcrwParams params;
  double loglik = 0.0;
  bool converged = false;
  int iterations = 0;
};

class CtcrwFitError : public ConvergenceError {
 public:
  CtcrwFitError(const std::string& what, CtcrwParams best, double best_loglik)
      : ConvergenceError(what), best_(best), best_loglik_(best_loglik) {}
  const CtcrwParams& best() const { return best_; }
  double best_loglik() const { return best_loglik_; }

 private:
  CtcrwParams best_;
  double best_loglik_;
};

struct CtcrwFitOptions {
  bool estimate_mu = false;
  double obs_eps = 1e-6;  // optimization runs over log(obs_sd + eps)
  double rel_tol = 1e-8;
  int max_iter = 500;
};

// Maximizes kalman_loglik over (gamma_ou, sigma_ou, obs_sd) on the log scale
// (plus mu when requested) by Nelder-Mead with one restart at the optimum.
inline CtcrwFit fit_ctcrw(const Track& track, const CtcrwParams& init, const CtcrwFitOptions& opt = {}) {
  track.validate();
  init.validate();
  if (track.size() < 4) throw DomainError(detail::concat("fit_ctcrw: track '", track.id, "' needs at least 4 fixes"));

  const Eigen::Index dim = opt.estimate_mu ? 5 : 3;
  auto unpack = [&](const Eigen::VectorXd& th) {
    CtcrwParams p = init;
    p.gamma_ou = std::exp(th[0]);
    p.sigma_ou = std::exp(th[1]);
    p.obs_sd = std::max(0.0, std::exp(th[2]) - opt.obs_eps);
    if (opt.estimate_mu) p.mu = {th[3], th[4]};
    return p;
  };
  auto objective = [&](const Eigen::VectorXd& th) {
    const CtcrwParams p = unpack(th);
    if (!(p.gamma_ou > 0.0) || !(p.sigma_ou > 0.0) || !std::isfinite(p.gamma_ou) || !std::isfinite(p.sigma_ou))
      return -std::numeric_limits<double>::infinity();
    try {
      return kalman_loglik(track, p);
    } catch (const NumericError&) {
      return -std::numeric_limits<double>::infinity();
    }
  };

  Eigen::VectorXd th0(dim);
  th0[0] = std::log(init.gamma_ou);
  th0[1] = std::log(init.sigma_ou);
  th0[2] = std::log(init.obs_sd + opt.obs_eps);
  if (opt.estimate_mu) {
    th0[3] = init.mu.x;
    th0[4] = init.mu.y;
  }
  const double ll0 = objective(th0);

  NelderMeadOptions nm;
  nm.rel_tol = opt.rel_tol;
  nm.max_iter = opt.max_iter;
  nm.initial_step = 0.5;
  OptimResult r = nelder_mead_maximize(objective, th0, nm);
  int iters = r.iterations;
  if (r.converged && iters < opt.max_iter) {
    nm.max_iter = opt.max_iter - iters;
    nm.initial_step = 0.1;
    OptimResult r2 = nelder_mead_maximize(objective, r.x, nm);
    iters += r2.iterations;
    if (r2.value >= r.value) {
      r2.converged = r2.converged && r.converged;
      r = r2;
    }
  }
  // Never return something worse than the starting point.
  if (std::isfinite(ll0) && ll0 > r.value) {
    r.x = th0;
    r.value = ll0;
  }
  const CtcrwParams best = unpack(r.x);
  if (!std::isfinite(r.value))
    throw CtcrwFitError(detail::concat("fit_ctcrw: no finite log-likelihood found for track '", track.id, "'"), best,
                        r.value);
  if (!r.converged)
    throw CtcrwFitError(detail::concat("fit_ctcrw: no convergence after ", iters, " iterations for track '", track.id,
                                       "' (best loglik ", r.value, ")"),
                        best, r.value);
  return CtcrwFit{best, r.value, true, iters};
}

// Continuous path draw on a fine time grid.
struct ImputedPath {
  std::vector<double> times;  // nondecreasing; equal consecutive times encode an instantaneous jump
  std::vector<Point> positions;
  std::string source_track;
  std::uint64_t draw_seed = 0;

  std::size_t size() const { return times.size(); }

  void validate() const {
    if (times.size() != positions.size() || times.size() < 2)
      throw DomainError(detail::concat("imputed path '", source_track, "' needs >= 2 points with matching times"));
    for (std::size_t i = 1; i < times.size(); ++i)
      if (!(times[i] >= times[i - 1]))
        throw DomainError(detail::concat("imputed path '", source_track, "': times decrease at index ", i));
  }

  // Linear interpolation; t must lie within [times.front(), times.back()].
  Point position_at(double t) const {
    if (!(t >= times.front() && t <= times.back()))
      throw DomainError(detail::concat("time ", t, " outside path span [", times.front(), ", ", times.back(), "]"));
    auto it = std::upper_bound(times.begin(), times.end(), t);
    if (it == times.end()) return positions.back();
    const std::size_t hi = static_cast<std::size_t>(it - times.begin());
    const std::size_t lo = hi - 1;
    const double span = times[hi] - times[lo];
    const double a = span > 0.0 ? (t - times[lo]) / span : 1.0;
    return {positions[lo].x + a * (positions[hi].x - positions[lo].x),
            positions[lo].y + a * (positions[hi].y - positions[lo].y)};
  }
};

// Smoothed marginal moments of position on the imputation grid.
struct SmoothedTrack {
  std::vector<double> times;
  std::vector<Point> mean;
  std::vector<Point> variance;  // per-axis marginal variances
};

inline SmoothedTrack smooth_track(const Track& track, const CtcrwParams& params, double delta) {
  track.validate();
  params.validate();
  if (!(delta > 0.0)) throw DomainError(detail::concat("smooth_track: delta must be positive, got ", delta));
  std::vector<std::size_t> fix_index;
  SmoothedTrack out;
  out.times = detail::merged_grid(track.times, delta, fix_index);
  const std::size_t n = out.times.size();
  out.mean.resize(n);
  out.variance.resize(n);
  for (int axis = 0; axis < 2; ++axis) {
    const auto fixes = detail::axis_obs(track, axis);
    std::vector<double> y(n, std::nan(""));
    for (std::size_t i = 0; i < fixes.size(); ++i) y[fix_index[i]] = fixes[i];
    const auto f = detail::run_filter(detail::axis_model(params, axis), out.times, y, fixes.front());
    detail::check_finite_loglik(f.loglik, params);
    const auto s = detail::run_smoother(f, true);
    for (std::size_t k = 0; k < n; ++k) {
      (axis == 0 ? out.mean[k].x : out.mean[k].y) = s.mean[k](0);
      (axis == 0 ? out.variance[k].x : out.variance[k].y) = s.cov[k](0, 0);
    }
  }
  return out;
}

// One draw from the conditional path law given the fixes, by simulate-then-smooth:
// smoothed(real) + unconditional - smoothed(synthetic observations of the unconditional path).
inline ImputedPath draw_path(const Track& track, const CtcrwParams& params, double delta, std::uint64_t seed) {
  track.validate();
  params.validate();
  if (!(delta > 0.0)) throw DomainError(detail::concat("draw_path: delta must be positive, got ", delta));
  Rng rng(seed);
  std::vector<std::size_t> fix_index;
  ImputedPath out;
  out.times = detail::merged_grid(track.times, delta, fix_index);
  out.source_track = track.id;
  out.draw_seed = seed;
  const std::size_t n = out.times.size();
  out.positions.resize(n);

  for (int axis = 0; axis < 2; ++axis) {
    const auto m = detail::axis_model(params, axis);
    const auto fixes = detail::axis_obs(track, axis);
    std::vector<double> y_real(n, std::nan("")), y_syn(n, std::nan(""));
    for (std::size_t i = 0; i < fixes.size(); ++i) y_real[fix_index[i]] = fixes[i];

    // Unconditional draw from the same prior.
    std::vector<Eigen::Vector2d> x(n);
    {
      const Eigen::Vector2d m0 = detail::prior_mean(m, fixes.front());
      const Eigen::Matrix2d P0 = detail::prior_cov(m);
      x[0] = m0 + Eigen::Vector2d(std::sqrt(P0(0, 0)) * standard_normal(rng), std::sqrt(P0(1, 1)) * standard_normal(rng));
      CtcrwParams p = params;
      for (std::size_t k = 1; k < n; ++k) {
        const auto tr = ou_transition(p, out.times[k] - out.times[k - 1]);
        Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(tr.Q);
        const Eigen::Vector2d ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
        const Eigen::Vector2d xi(standard_normal(rng), standard_normal(rng));
        x[k] = tr.T * x[k - 1] + m.mu * tr.drift + es.eigenvectors() * ev.cwiseProduct(xi);
      }
    }
    const double obs_sd = std::sqrt(m.obs_var);
    for (std::size_t i = 0; i < fixes.size(); ++i)
      y_syn[fix_index[i]] = x[fix_index[i]](0) + obs_sd * standard_normal(rng);

    const auto f_real = detail::run_filter(m, out.times, y_real, fixes.front());
    detail::check_finite_loglik(f_real.loglik, params);
    const auto f_syn = detail::run_filter(m, out.times, y_syn, fixes.front());
    const auto s_real = detail::run_smoother(f_real, false);
    const auto s_syn = detail::run_smoother(f_syn, false);
    for (std::size_t k = 0; k < n; ++k) {
      const double v = s_real.mean[k](0) + x[k](0) - s_syn.mean[k](0);
      (axis == 0 ? out.positions[k].x : out.positions[k].y) = v;
    }
  }
  return out;
}

}  // namespace ctds
