#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <numbers>
#include <string>
#include <vector>

#include "ctds/ctcrw.hpp"
#include "ctds/design.hpp"
#include "ctds/discretize.hpp"
#include "ctds/error.hpp"
#include "ctds/grid.hpp"
#include "ctds/lasso.hpp"
#include "ctds/parallel.hpp"
#include "ctds/pipeline.hpp"
#include "ctds/pool.hpp"
#include "ctds/rng.hpp"

namespace ctds {

enum class SimMethod { Auto, Direct, Thinning };

struct SimConfig {
  std::shared_ptr<const CovariateModel> model;
  Eigen::VectorXd alpha;  // over the model's expanded columns
  CellId start{0};
  double t0 = 0.0;
  double t1 = 86400.0;
  double interval = 14400.0;  // thinning interval for synthetic telemetry
  std::uint64_t seed = 1;
  SimMethod method = SimMethod::Auto;

  void validate() const {
    if (!model) throw DomainError("simulation config has no covariate model");
    const auto& grid = model->grid();
    if (!grid.contains(start) || !grid.valid(start))
      throw DomainError(detail::concat("start cell ", start.index, " is not a valid cell"));
    if (!(t1 > t0)) throw DomainError(detail::concat("simulation span needs t1 > t0 (", t0, ", ", t1, ")"));
    if (alpha.size() != static_cast<Eigen::Index>(model->n_columns()))
      throw DomainError(detail::concat("alpha has ", alpha.size(), " entries, model has ", model->n_columns(), " columns"));
    if (!alpha.allFinite()) throw DomainError("alpha has non-finite entries");
  }
};

namespace detail {

// Per time-varying spec: min and max of beta_s(t) on a 1-minute grid over one period.
inline std::vector<std::pair<double, double>> spline_ranges(const CovariateModel& m, const Eigen::VectorXd& alpha) {
  const auto& specs = m.specs();
  std::vector<std::pair<double, double>> out(specs.size(), {0.0, 0.0});
  if (!m.any_time_varying()) return out;
  for (std::size_t s = 0; s < specs.size(); ++s) out[s] = {kInf, -kInf};
  const double period = m.spline().period;
  for (double t = 0.0; t <= period; t += 60.0) {
    const Eigen::VectorXd beta = m.coefficients_at(alpha, m.basis_at(t));
    for (std::size_t s = 0; s < specs.size(); ++s) {
      out[s].first = std::min(out[s].first, beta[static_cast<Eigen::Index>(s)]);
      out[s].second = std::max(out[s].second, beta[static_cast<Eigen::Index>(s)]);
    }
  }
  return out;
}

}  // namespace detail

// Event-driven CTMC simulation. Covariate values are taken at the entry time of each
// visit. With time-varying coefficients, moves are generated by thinning against a
// bound on the total rate over the period; otherwise residences are drawn directly.
inline DiscretePath simulate_ctds(const SimConfig& cfg) {
  cfg.validate();
  const CovariateModel& m = *cfg.model;
  const RasterGrid& grid = m.grid();
  const bool tv = m.any_time_varying();
  const bool thinning = cfg.method == SimMethod::Thinning || (cfg.method == SimMethod::Auto && tv);
  const auto ranges = detail::spline_ranges(m, cfg.alpha);
  const auto& specs = m.specs();

  Rng rng(cfg.seed);
  DiscretePath dp;
  CellId cell = cfg.start;
  double t = cfg.t0;
  UnitDirection prev = UnitDirection::zero();
  Eigen::RowVectorXd row(static_cast<Eigen::Index>(m.n_columns()));
  std::vector<double> rate(4);

  while (true) {
    dp.cells.push_back(cell);
    dp.clock_times.push_back(t);
    const auto nbs = grid.neighbors(cell);
    if (nbs.empty()) throw DomainError(detail::concat("cell ", cell.index, " has no available neighbors (absorbing)"));
    std::vector<Eigen::VectorXd> bases(nbs.size());
    for (std::size_t j = 0; j < nbs.size(); ++j) m.base_values(cell, nbs[j], t, prev, bases[j]);

    auto rates_at = [&](double s, double& total) {
      const Eigen::VectorXd ph = m.basis_at(s);
      total = 0.0;
      for (std::size_t j = 0; j < nbs.size(); ++j) {
        m.expand(bases[j], ph, row);
        rate[j] = std::exp(row.dot(cfg.alpha));
        total += rate[j];
      }
    };

    double next = 0.0;
    double total = 0.0;
    if (!thinning) {
      rates_at(t, total);
      next = t + exponential(rng, total);
    } else {
      double lam_bar = 0.0;
      for (std::size_t j = 0; j < nbs.size(); ++j) {
        double log_b = 0.0;
        for (std::size_t s = 0; s < specs.size(); ++s) {
          const double b = bases[j][static_cast<Eigen::Index>(s)];
          if (specs[s].time_varying) {
            log_b += std::max(b * ranges[s].first, b * ranges[s].second);
          } else {
            log_b += b * cfg.alpha[static_cast<Eigen::Index>(m.first_column(s))];
          }
        }
        lam_bar += std::exp(log_b);
      }
      lam_bar *= 1.01;
      next = t;
      while (true) {
        next += exponential(rng, lam_bar);
        if (next >= cfg.t1) break;
        rates_at(next, total);
        if (total > lam_bar)
          throw NumericError(detail::concat("thinning bound ", lam_bar, " below rate ", total, " at time ", next));
        if (uniform01(rng) * lam_bar < total) break;
      }
    }
    if (next >= cfg.t1) break;
    // Destination proportional to the rates at the move time.
    double u = uniform01(rng) * total;
    std::size_t pick = nbs.size() - 1;
    for (std::size_t j = 0; j < nbs.size(); ++j) {
      if (u < rate[j]) {
        pick = j;
        break;
      }
      u -= rate[j];
    }
    prev = nbs[pick].w;
    cell = nbs[pick].cell;
    t = next;
  }
  const std::size_t n = dp.cells.size();
  dp.residence_times.resize(n);
  for (std::size_t i = 0; i + 1 < n; ++i) dp.residence_times[i] = dp.clock_times[i + 1] - dp.clock_times[i];
  dp.end_time = cfg.t1;
  dp.residence_times[n - 1] = cfg.t1 - dp.clock_times[n - 1];
  dp.censored_final = true;
  return dp;
}

// Cell occupied at time t (the last visit entered at or before t).
inline CellId cell_at_time(const DiscretePath& dp, double t) {
  auto it = std::upper_bound(dp.clock_times.begin(), dp.clock_times.end(), t);
  if (it == dp.clock_times.begin()) return dp.cells.front();
  return dp.cells[static_cast<std::size_t>(it - dp.clock_times.begin()) - 1];
}

// Synthetic telemetry: the occupied cell's center (plus optional jitter) at
// t0 + k * interval, k = 0..floor(span / interval). When that yields a single fix,
// a second one is placed at the end of the path.
inline Track thin_to_track(const DiscretePath& dp, const RasterGrid& grid, double interval, double jitter_sd = 0.0,
                           std::uint64_t seed = 1, std::string id = "sim") {
  if (!(interval > 0.0)) throw DomainError(detail::concat("thinning interval must be positive, got ", interval));
  if (!(jitter_sd >= 0.0)) throw DomainError(detail::concat("jitter sd must be >= 0, got ", jitter_sd));
  const double t0 = dp.start_time(), t1 = dp.end_time;
  const auto n = static_cast<std::size_t>(std::floor((t1 - t0) / interval)) + 1;
  std::vector<double> times;
  for (std::size_t k = 0; k < n; ++k) times.push_back(t0 + static_cast<double>(k) * interval);
  if (times.size() == 1 && t1 > t0) times.push_back(t1);
  Rng rng(seed);
  Track tr;
  tr.id = std::move(id);
  for (double t : times) {
    Point p = grid.center(cell_at_time(dp, t));
    if (jitter_sd > 0.0) {
      p.x += jitter_sd * standard_normal(rng);
      p.y += jitter_sd * standard_normal(rng);
    }
    tr.times.push_back(t);
    tr.positions.push_back(p);
  }
  return tr;
}

// ---- recovery study -------------------------------------------------------

struct LandscapeOptions {
  std::size_t n_rows = 50;
  std::size_t n_cols = 50;
  double cell_size = 100.0;
  std::size_t n_patches = 12;     // open-habitat blobs
  double patch_radius = 4.0;      // cells
  std::size_t n_features = 25;    // feature (kill-site-like) cells
  std::uint64_t seed = 7;
};

// Grid with layers "not_forest" (0/1 blobs) and "feature" (0/1 scattered cells).
inline RasterGrid synthetic_landscape(const LandscapeOptions& o) {
  RasterGrid grid(o.n_rows, o.n_cols, o.cell_size, 0.0, 0.0);
  Rng rng(o.seed);
  const std::size_t n = o.n_rows * o.n_cols;
  std::vector<double> open(n, 0.0), feature(n, 0.0);
  for (std::size_t b = 0; b < o.n_patches; ++b) {
    const double cr = uniform01(rng) * static_cast<double>(o.n_rows);
    const double cc = uniform01(rng) * static_cast<double>(o.n_cols);
    const double rad = o.patch_radius * (0.5 + uniform01(rng));
    for (std::size_t r = 0; r < o.n_rows; ++r)
      for (std::size_t c = 0; c < o.n_cols; ++c) {
        const double dr = static_cast<double>(r) + 0.5 - cr, dc = static_cast<double>(c) + 0.5 - cc;
        if (dr * dr + dc * dc <= rad * rad) open[r * o.n_cols + c] = 1.0;
      }
  }
  for (std::size_t f = 0; f < o.n_features; ++f) {
    const auto idx = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n)) % n;
    feature[idx] = 1.0;
  }
  grid.add_layer("not_forest", open);
  grid.add_layer("feature", feature);
  return grid;
}

// A companion animal circling the grid center, sampled every `step` seconds over [t0, t1].
inline ImputedPath circling_companion(const RasterGrid& grid, double t0, double t1, double radius, double period,
                                      double step = 600.0) {
  const double cx = grid.origin_x() + 0.5 * grid.cell_size() * static_cast<double>(grid.n_cols());
  const double cy = grid.origin_y() + 0.5 * grid.cell_size() * static_cast<double>(grid.n_rows());
  ImputedPath p;
  p.source_track = "companion";
  for (double t = t0;; t += step) {
    const double tt = std::min(t, t1);
    const double a = 2.0 * std::numbers::pi * (tt - t0) / period;
    p.times.push_back(tt);
    p.positions.push_back({cx + radius * std::cos(a), cy + radius * std::sin(a)});
    if (tt >= t1) break;
  }
  return p;
}

enum class RecoveryEstimator { Imputed, Oracle };

struct RecoveryProtocol {
  std::shared_ptr<const CovariateModel> model;
  Eigen::VectorXd truth;  // over the model's columns
  double span = 14.0 * 86400.0;
  double interval = 14400.0;
  double jitter_sd = 0.0;
  RecoveryEstimator estimator = RecoveryEstimator::Imputed;
  std::size_t K = 10;
  double delta = 60.0;
  CtcrwParams ctcrw_init{};
  std::size_t n_folds = 5;
  CvRule rule = CvRule::OneSe;
  double cv_group_seconds = 14400.0;
  std::size_t start_margin = 10;  // start cells are drawn at least this far from the edge
  int max_redraws = 20;           // per imputation
  std::size_t threads = 1;        // across replicates
};

struct RecoveryRow {
  std::string covariate;
  double truth = 0.0;
  double prop_nonzero = 0.0;
  double prop_zero = 0.0;
  double prop_positive = 0.0;
  double prop_negative = 0.0;
  double min = 0.0;
  double max = 0.0;
};

struct RecoverySummary {
  std::vector<RecoveryRow> rows;  // penalized columns only
  std::size_t n_replicates = 0;
  std::size_t n_succeeded = 0;
  std::size_t n_failed = 0;
  std::vector<std::string> failures;
  Eigen::MatrixXd estimates;  // succeeded replicates x columns
  std::vector<std::size_t> replicate_index;
};

// One replicate's coefficient estimate; throws on failure.
inline Eigen::VectorXd recovery_replicate(const RecoveryProtocol& pr, std::uint64_t seed) {
  const CovariateModel& m = *pr.model;
  const RasterGrid& grid = m.grid();
  Rng rng(derive_seed(seed, 0));
  SimConfig sc;
  sc.model = pr.model;
  sc.alpha = pr.truth;
  sc.t0 = 0.0;
  sc.t1 = pr.span;
  sc.interval = pr.interval;
  sc.seed = derive_seed(seed, 1);
  for (int tries = 0;; ++tries) {
    const std::size_t lo = pr.start_margin;
    const std::size_t hr = grid.n_rows() > 2 * lo ? grid.n_rows() - 2 * lo : 1;
    const std::size_t hc = grid.n_cols() > 2 * lo ? grid.n_cols() - 2 * lo : 1;
    const std::size_t r = std::min(grid.n_rows() - 1, lo + static_cast<std::size_t>(uniform01(rng) * static_cast<double>(hr)));
    const std::size_t c = std::min(grid.n_cols() - 1, lo + static_cast<std::size_t>(uniform01(rng) * static_cast<double>(hc)));
    sc.start = grid.cell(r, c);
    if (grid.valid(sc.start)) break;
    if (tries > 1000) throw DomainError("no valid start cell found");
  }
  const DiscretePath truth_path = simulate_ctds(sc);

  DesignData design;
  if (pr.estimator == RecoveryEstimator::Oracle) {
    design = build_design(truth_path, m);
  } else {
    const Track track = thin_to_track(truth_path, grid, pr.interval, pr.jitter_sd, derive_seed(seed, 2));
    const CtcrwFit fit = fit_ctcrw(track, pr.ctcrw_init);
    ImputationConfig ic;
    ic.K = pr.K;
    ic.delta = pr.delta;
    ic.max_redraws = pr.max_redraws;
    ic.seed = derive_seed(seed, 3);
    const auto set = impute_designs(track, fit.params, m, ic);
    design = stack_designs(set.designs);
  }
  CvOptions co;
  co.rule = pr.rule;
  co.group_seconds = pr.estimator == RecoveryEstimator::Oracle ? 0.0 : pr.cv_group_seconds;
  return cv_lasso(design, pr.n_folds, {}, derive_seed(seed, 4), co).beta_hat;
}

inline RecoverySummary recovery_study(const RecoveryProtocol& pr, std::size_t n_replicates, std::uint64_t seed) {
  if (!pr.model) throw DomainError("recovery protocol has no covariate model");
  if (pr.truth.size() != static_cast<Eigen::Index>(pr.model->n_columns()))
    throw DomainError(detail::concat("truth has ", pr.truth.size(), " entries, model has ", pr.model->n_columns()));
  const auto p = static_cast<Eigen::Index>(pr.model->n_columns());
  std::vector<Eigen::VectorXd> est(n_replicates);
  std::vector<std::string> err(n_replicates);
  std::vector<bool> ok(n_replicates, false);
  parallel_for(n_replicates, pr.threads, [&](std::size_t r) {
    try {
      est[r] = recovery_replicate(pr, derive_seed(seed, r));
      ok[r] = true;
    } catch (const std::exception& e) {
      err[r] = e.what();
    }
  });

  RecoverySummary out;
  out.n_replicates = n_replicates;
  for (std::size_t r = 0; r < n_replicates; ++r) {
    if (ok[r]) {
      out.replicate_index.push_back(r);
    } else {
      out.failures.push_back(detail::concat("replicate ", r, ": ", err[r]));
    }
  }
  out.n_succeeded = out.replicate_index.size();
  out.n_failed = n_replicates - out.n_succeeded;
  out.estimates.resize(static_cast<Eigen::Index>(out.n_succeeded), p);
  for (std::size_t i = 0; i < out.n_succeeded; ++i)
    out.estimates.row(static_cast<Eigen::Index>(i)) = est[out.replicate_index[i]].transpose();

  const auto& names = pr.model->column_names();
  const auto& pen = pr.model->penalized();
  const double n = static_cast<double>(std::max<std::size_t>(1, out.n_succeeded));
  for (Eigen::Index j = 0; j < p; ++j) {
    if (!pen[static_cast<std::size_t>(j)]) continue;
    RecoveryRow row;
    row.covariate = names[static_cast<std::size_t>(j)];
    row.truth = pr.truth[j];
    std::size_t nz = 0, pos = 0, neg = 0;
    row.min = detail::kInf;
    row.max = -detail::kInf;
    for (Eigen::Index i = 0; i < out.estimates.rows(); ++i) {
      const double v = out.estimates(i, j);
      nz += v != 0.0;
      pos += v > 0.0;
      neg += v < 0.0;
      row.min = std::min(row.min, v);
      row.max = std::max(row.max, v);
    }
    if (out.n_succeeded == 0) row.min = row.max = std::nan("");
    row.prop_nonzero = static_cast<double>(nz) / n;
    row.prop_zero = out.n_succeeded ? 1.0 - row.prop_nonzero : std::nan("");
    row.prop_positive = static_cast<double>(pos) / n;
    row.prop_negative = static_cast<double>(neg) / n;
    out.rows.push_back(row);
  }
  return out;
}

}  // namespace ctds
