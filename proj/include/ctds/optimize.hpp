#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <vector>

namespace ctds {

struct OptimResult {
  Eigen::VectorXd x;
  double value = 0.0;  // objective at x (maximization)
  bool converged = false;
  int iterations = 0;
  int evaluations = 0;
};

struct NelderMeadOptions {
  double rel_tol = 1e-8;   // relative spread of objective values across the simplex
  int max_iter = 500;
  double initial_step = 0.5;
};

// Derivative-free maximization. Non-finite objective values are treated as -inf.
inline OptimResult nelder_mead_maximize(const std::function<double(const Eigen::VectorXd&)>& f,
                                        const Eigen::VectorXd& x0, const NelderMeadOptions& opt = {}) {
  const Eigen::Index n = x0.size();
  OptimResult res;
  auto eval = [&](const Eigen::VectorXd& x) {
    ++res.evaluations;
    const double v = -f(x);  // minimize the negation
    return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
  };

  std::vector<Eigen::VectorXd> pts(n + 1, x0);
  std::vector<double> val(n + 1);
  for (Eigen::Index i = 0; i < n; ++i) pts[i + 1][i] += opt.initial_step;
  for (Eigen::Index i = 0; i <= n; ++i) val[i] = eval(pts[i]);

  std::vector<Eigen::Index> order(n + 1);
  for (res.iterations = 0; res.iterations < opt.max_iter; ++res.iterations) {
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return val[a] < val[b]; });
    const double best = val[order.front()], worst = val[order.back()];
    if (std::isfinite(worst) && std::abs(worst - best) <= opt.rel_tol * (std::abs(best) + 1e-12)) {
      res.converged = true;
      break;
    }
    Eigen::VectorXd centroid = Eigen::VectorXd::Zero(n);
    for (Eigen::Index i = 0; i < n; ++i) centroid += pts[order[i]];
    centroid /= static_cast<double>(n);

    const auto hi = order.back();
    const auto second = order[n - 1];
    Eigen::VectorXd xr = centroid + (centroid - pts[hi]);
    const double fr = eval(xr);
    if (fr < val[order.front()]) {
      Eigen::VectorXd xe = centroid + 2.0 * (centroid - pts[hi]);
      const double fe = eval(xe);
      if (fe < fr) {
        pts[hi] = xe;
        val[hi] = fe;
      } else {
        pts[hi] = xr;
        val[hi] = fr;
      }
      continue;
    }
    if (fr < val[second]) {
      pts[hi] = xr;
      val[hi] = fr;
      continue;
    }
    const bool outside = fr < val[hi];
    Eigen::VectorXd xc = outside ? Eigen::VectorXd(centroid + 0.5 * (xr - centroid))
                                 : Eigen::VectorXd(centroid + 0.5 * (pts[hi] - centroid));
    const double fc = eval(xc);
    if (fc < (outside ? fr : val[hi])) {
      pts[hi] = xc;
      val[hi] = fc;
      continue;
    }
    // Shrink toward the best vertex.
    const auto lo = order.front();
    for (Eigen::Index i = 0; i <= n; ++i) {
      if (i == lo) continue;
      pts[i] = pts[lo] + 0.5 * (pts[i] - pts[lo]);
      val[i] = eval(pts[i]);
    }
  }
  const auto best_it = std::min_element(val.begin(), val.end());
  res.x = pts[static_cast<std::size_t>(best_it - val.begin())];
  res.value = -*best_it;
  return res;
}

struct BfgsOptions {
  double grad_tol = 1e-10;
  int max_iter = 1000;
};

// Quasi-Newton maximization with backtracking (Armijo) line search.
// `fg` returns the objective and writes the gradient.
inline OptimResult bfgs_maximize(const std::function<double(const Eigen::VectorXd&, Eigen::VectorXd&)>& fg,
                                 const Eigen::VectorXd& x0, const BfgsOptions& opt = {}) {
  const Eigen::Index n = x0.size();
  OptimResult res;
  Eigen::VectorXd x = x0, g(n), gn(n);
  double fx = fg(x, g);
  ++res.evaluations;
  Eigen::MatrixXd Hinv = Eigen::MatrixXd::Identity(n, n);
  for (res.iterations = 0; res.iterations < opt.max_iter; ++res.iterations) {
    if (g.lpNorm<Eigen::Infinity>() <= opt.grad_tol) {
      res.converged = true;
      break;
    }
    Eigen::VectorXd dir = Hinv * g;  // ascent direction
    if (dir.dot(g) <= 0.0) {
      Hinv.setIdentity();
      dir = g;
    }
    double step = 1.0, fn = -std::numeric_limits<double>::infinity();
    Eigen::VectorXd xn;
    for (int ls = 0; ls < 60; ++ls, step *= 0.5) {
      xn = x + step * dir;
      fn = fg(xn, gn);
      ++res.evaluations;
      if (std::isfinite(fn) && fn >= fx + 1e-4 * step * dir.dot(g)) break;
    }
    if (!std::isfinite(fn) || fn < fx) break;
    const Eigen::VectorXd s = xn - x;
    const Eigen::VectorXd y = g - gn;  // gradient of the negated objective changes by -(gn - g)
    const double sy = s.dot(y);
    x = xn;
    const double fprev = fx;
    fx = fn;
    g = gn;
    if (sy > 1e-300) {
      const double rho = 1.0 / sy;
      const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(n, n);
      Hinv = (I - rho * s * y.transpose()) * Hinv * (I - rho * y * s.transpose()) + rho * s * s.transpose();
    }
    if (s.lpNorm<Eigen::Infinity>() == 0.0 && fx == fprev) break;
  }
  if (g.lpNorm<Eigen::Infinity>() <= opt.grad_tol) res.converged = true;
  res.x = x;
  res.value = fx;
  return res;
}

}  // namespace ctds
