#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <vector>

#include "ctds/error.hpp"

namespace ctds {

// Cyclic B-spline basis over time-of-day with uniformly spaced knots.
struct SplineConfig {
  double period = 86400.0;
  double knot_spacing = 21600.0;
  int degree = 3;

  int n_spl() const { return static_cast<int>(std::llround(period / knot_spacing)); }

  void validate() const {
    if (!(period > 0.0) || !(knot_spacing > 0.0))
      throw DomainError(detail::concat("spline period and knot spacing must be positive (", period, ", ",
                                       knot_spacing, ")"));
    const double ratio = period / knot_spacing;
    if (std::abs(ratio - std::round(ratio)) > 1e-9 * ratio || std::round(ratio) < 1.0)
      throw DomainError(detail::concat("spline period ", period, " is not a multiple of knot spacing ", knot_spacing));
    if (degree < 1) throw DomainError(detail::concat("spline degree must be >= 1, got ", degree));
  }
};

// Basis values phi_1..phi_n at time t (seconds); nonnegative, sum to one, periodic.
inline Eigen::VectorXd spline_basis(const SplineConfig& cfg, double t) {
  cfg.validate();
  const int n = cfg.n_spl();
  const int d = cfg.degree;
  double u = std::fmod(t, cfg.period);
  if (u < 0.0) u += cfg.period;
  double x = u / cfg.knot_spacing;
  int span = static_cast<int>(std::floor(x));
  if (span >= n) {  // rounding at the period boundary
    span = 0;
    x = 0.0;
  }
  // de Boor's triangular scheme on integer knots; N[r] belongs to function span - d + r.
  std::vector<double> N(d + 1, 0.0), left(d + 1, 0.0), right(d + 1, 0.0);
  N[0] = 1.0;
  for (int j = 1; j <= d; ++j) {
    left[j] = x - static_cast<double>(span + 1 - j);
    right[j] = static_cast<double>(span + j) - x;
    double saved = 0.0;
    for (int r = 0; r < j; ++r) {
      const double temp = N[r] / (right[r + 1] + left[j - r]);
      N[r] = saved + right[r + 1] * temp;
      saved = left[j - r] * temp;
    }
    N[j] = saved;
  }
  Eigen::VectorXd phi = Eigen::VectorXd::Zero(n);
  for (int r = 0; r <= d; ++r) {
    int k = (span - d + r) % n;
    if (k < 0) k += n;
    phi[k] += N[r];
  }
  return phi;
}

// Varying coefficient beta(t) = sum_k alpha_k phi_k(t).
inline double spline_value(const SplineConfig& cfg, const Eigen::Ref<const Eigen::VectorXd>& alpha, double t) {
  return spline_basis(cfg, t).dot(alpha);
}

}  // namespace ctds
