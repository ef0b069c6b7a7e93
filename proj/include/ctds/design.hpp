#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <memory>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "ctds/ctcrw.hpp"
#include "ctds/discretize.hpp"
#include "ctds/error.hpp"
#include "ctds/grid.hpp"
#include "ctds/spline.hpp"

namespace ctds {

enum class CovariateKind { Intercept, Location, DirectionalFeature, DirectionalConspecific, DirectionalPersistence };

inline const char* kind_name(CovariateKind k) {
  switch (k) {
    case CovariateKind::Intercept: return "intercept";
    case CovariateKind::Location: return "location";
    case CovariateKind::DirectionalFeature: return "directional_feature";
    case CovariateKind::DirectionalConspecific: return "directional_conspecific";
    case CovariateKind::DirectionalPersistence: return "directional_persistence";
  }
  return "?";
}

// One driver of movement. `layer` names a grid layer: the covariate values for
// Location, the feature mask (nonzero = feature) for DirectionalFeature.
struct CovariateSpec {
  std::string name;
  CovariateKind kind = CovariateKind::Intercept;
  std::string layer;
  std::shared_ptr<const ImputedPath> companion;
  bool time_varying = false;

  static CovariateSpec intercept(std::string name = "intercept", bool time_varying = false) {
    return {std::move(name), CovariateKind::Intercept, {}, nullptr, time_varying};
  }
  static CovariateSpec location(std::string name, std::string layer, bool time_varying = false) {
    return {std::move(name), CovariateKind::Location, std::move(layer), nullptr, time_varying};
  }
  static CovariateSpec directional_feature(std::string name, std::string feature_layer, bool time_varying = false) {
    return {std::move(name), CovariateKind::DirectionalFeature, std::move(feature_layer), nullptr, time_varying};
  }
  static CovariateSpec directional_conspecific(std::string name, std::shared_ptr<const ImputedPath> companion,
                                               bool time_varying = false) {
    return {std::move(name), CovariateKind::DirectionalConspecific, {}, std::move(companion), time_varying};
  }
  static CovariateSpec directional_persistence(std::string name = "persistence", bool time_varying = false) {
    return {std::move(name), CovariateKind::DirectionalPersistence, {}, nullptr, time_varying};
  }
};

// q = v . w
inline double directional_value(const UnitDirection& v, const UnitDirection& w) { return v.dot(w); }

// Unit vector from `own` toward the companion's interpolated position at t;
// zero within half a cell.
inline UnitDirection conspecific_direction(Point own, const ImputedPath& companion, double t, double cell_size) {
  const Point c = companion.position_at(t);
  const double dx = c.x - own.x, dy = c.y - own.y;
  if (std::hypot(dx, dy) < 0.5 * cell_size) return UnitDirection::zero();
  return UnitDirection::from(dx, dy);
}

// Specs bound to a grid and spline basis: evaluates covariate rows for any
// (cell, neighbor, time, previous move). Shared by the design builder and the simulator.
class CovariateModel {
 public:
  CovariateModel(std::shared_ptr<const RasterGrid> grid, std::vector<CovariateSpec> specs, SplineConfig spline = {})
      : grid_(std::move(grid)), specs_(std::move(specs)), spline_(spline) {
    if (!grid_) throw DomainError("CovariateModel: null grid");
    if (specs_.empty()) throw DomainError("CovariateModel: no covariates");
    spline_.validate();
    std::set<std::string> seen;
    bearings_.resize(specs_.size());
    for (std::size_t s = 0; s < specs_.size(); ++s) {
      const auto& spec = specs_[s];
      if (!seen.insert(spec.name).second) throw DomainError(detail::concat("duplicate covariate name '", spec.name, "'"));
      switch (spec.kind) {
        case CovariateKind::Location:
          grid_->layer(spec.layer);
          break;
        case CovariateKind::DirectionalFeature:
          bearings_[s] = bearing_to_nearest_feature(*grid_, mask_from_layer(grid_->layer(spec.layer)));
          break;
        case CovariateKind::DirectionalConspecific:
          if (!spec.companion) throw DomainError(detail::concat("covariate '", spec.name, "' has no companion path"));
          spec.companion->validate();
          break;
        default:
          break;
      }
      first_column_.push_back(column_names_.size());
      const int width = spec.time_varying ? spline_.n_spl() : 1;
      for (int k = 0; k < width; ++k) {
        column_names_.push_back(spec.time_varying ? detail::concat(spec.name, "[", k, "]") : spec.name);
        column_groups_.push_back(spec.name);
        column_spec_.push_back(s);
        penalized_.push_back(spec.kind != CovariateKind::Intercept);
      }
    }
  }

  CovariateModel(const RasterGrid& grid, std::vector<CovariateSpec> specs, SplineConfig spline = {})
      : CovariateModel(std::make_shared<const RasterGrid>(grid), std::move(specs), spline) {}

  const RasterGrid& grid() const { return *grid_; }
  std::shared_ptr<const RasterGrid> grid_ptr() const { return grid_; }
  const std::vector<CovariateSpec>& specs() const { return specs_; }
  const SplineConfig& spline() const { return spline_; }
  std::size_t n_columns() const { return column_names_.size(); }
  const std::vector<std::string>& column_names() const { return column_names_; }
  const std::vector<std::string>& column_groups() const { return column_groups_; }
  const std::vector<bool>& penalized() const { return penalized_; }
  std::size_t first_column(std::size_t spec) const { return first_column_[spec]; }
  bool any_time_varying() const {
    for (const auto& s : specs_)
      if (s.time_varying) return true;
    return false;
  }

  // Covariate value of spec s (before spline expansion) for the move from -> nb at time t.
  double base_value(std::size_t s, CellId from, const Neighbor& nb, double t, const UnitDirection& prev) const {
    const auto& spec = specs_[s];
    switch (spec.kind) {
      case CovariateKind::Intercept:
        return 1.0;
      case CovariateKind::Location:
        return grid_->layer(spec.layer)[from.index];
      case CovariateKind::DirectionalFeature:
        return directional_value(bearings_[s][from.index], nb.w);
      case CovariateKind::DirectionalConspecific:
        return directional_value(conspecific_direction(grid_->center(from), *spec.companion, t, grid_->cell_size()),
                                 nb.w);
      case CovariateKind::DirectionalPersistence:
        return directional_value(prev, nb.w);
    }
    return 0.0;
  }

  void base_values(CellId from, const Neighbor& nb, double t, const UnitDirection& prev, Eigen::VectorXd& out) const {
    out.resize(static_cast<Eigen::Index>(specs_.size()));
    for (std::size_t s = 0; s < specs_.size(); ++s) out[static_cast<Eigen::Index>(s)] = base_value(s, from, nb, t, prev);
  }

  // Spline-expanded row psi given base values and the basis at the evaluation time.
  void expand(const Eigen::VectorXd& base, const Eigen::VectorXd& phi, Eigen::Ref<Eigen::RowVectorXd, 0, Eigen::InnerStride<>> row) const {
    for (std::size_t s = 0; s < specs_.size(); ++s) {
      const auto c0 = static_cast<Eigen::Index>(first_column_[s]);
      const double b = base[static_cast<Eigen::Index>(s)];
      if (specs_[s].time_varying) {
        row.segment(c0, phi.size()) = b * phi.transpose();
      } else {
        row[c0] = b;
      }
    }
  }

  void fill_row(CellId from, const Neighbor& nb, double t, const UnitDirection& prev,
                Eigen::Ref<Eigen::RowVectorXd, 0, Eigen::InnerStride<>> row) const {
    Eigen::VectorXd base;
    base_values(from, nb, t, prev, base);
    expand(base, basis_at(t), row);
  }

  Eigen::VectorXd basis_at(double t) const {
    return any_time_varying() ? spline_basis(spline_, t) : Eigen::VectorXd();
  }

  // beta_s(t) for each spec, from a coefficient vector over the expanded columns.
  Eigen::VectorXd coefficients_at(const Eigen::VectorXd& alpha, const Eigen::VectorXd& phi) const {
    Eigen::VectorXd beta(static_cast<Eigen::Index>(specs_.size()));
    for (std::size_t s = 0; s < specs_.size(); ++s) {
      const auto c0 = static_cast<Eigen::Index>(first_column_[s]);
      beta[static_cast<Eigen::Index>(s)] = specs_[s].time_varying ? alpha.segment(c0, phi.size()).dot(phi) : alpha[c0];
    }
    return beta;
  }

 private:
  std::shared_ptr<const RasterGrid> grid_;
  std::vector<CovariateSpec> specs_;
  SplineConfig spline_;
  std::vector<std::vector<UnitDirection>> bearings_;
  std::vector<std::size_t> first_column_;
  std::vector<std::string> column_names_;
  std::vector<std::string> column_groups_;
  std::vector<std::size_t> column_spec_;
  std::vector<bool> penalized_;
};

// Latent Poisson design: one row per (transition, available neighbor). Rows of a
// transition form a contiguous block with one z = 1 (none for a censored tail block)
// and a shared offset log(residence).
struct DesignData {
  Eigen::MatrixXd X;
  Eigen::VectorXd z;
  Eigen::VectorXd offset;
  Eigen::VectorXd weight;                  // log-likelihood weight per row (1, or 1/K when stacked)
  std::vector<std::size_t> block_start;    // row range of block b is [block_start[b], block_start[b+1])
  std::vector<double> block_time;          // entry time of each block
  std::vector<std::size_t> block_source;   // which input design a block came from (stacking)
  std::vector<std::size_t> row_block;      // row -> block
  std::vector<RookDir> row_dir;            // row -> neighbor direction
  std::vector<std::string> column_names;
  std::vector<std::string> column_groups;  // column -> covariate name
  std::vector<bool> penalized;

  Eigen::Index n_rows() const { return X.rows(); }
  Eigen::Index n_cols() const { return X.cols(); }
  std::size_t n_blocks() const { return block_start.empty() ? 0 : block_start.size() - 1; }

  void validate() const {
    const auto n = X.rows();
    if (z.size() != n || offset.size() != n || weight.size() != n || static_cast<Eigen::Index>(row_block.size()) != n ||
        static_cast<Eigen::Index>(row_dir.size()) != n)
      throw DomainError("design: row-indexed fields disagree in length");
    if (static_cast<Eigen::Index>(column_names.size()) != X.cols() ||
        static_cast<Eigen::Index>(column_groups.size()) != X.cols() ||
        static_cast<Eigen::Index>(penalized.size()) != X.cols())
      throw DomainError("design: column metadata disagrees with column count");
    if (block_start.empty() || block_start.front() != 0 || block_start.back() != static_cast<std::size_t>(n))
      throw DomainError("design: block_start does not cover the rows");
  }
};

struct DesignOptions {
  bool use_censored_tail = false;  // add an all-zero block for the censored final visit
};

namespace detail {

inline UnitDirection move_direction(const RasterGrid& grid, CellId from, CellId to) {
  const auto nb = grid.neighbors(from);
  const auto j = nb.find(to);
  if (!j) throw DomainError(detail::concat("cells ", from.index, " and ", to.index, " are not rook-adjacent"));
  return nb[*j].w;
}

}  // namespace detail

inline DesignData build_design(const DiscretePath& dp, const CovariateModel& model, const DesignOptions& opt = {}) {
  const RasterGrid& grid = model.grid();
  dp.validate(grid);
  const auto records = transition_clock_times(dp);
  const std::size_t n_trans = records.size();
  const bool tail = opt.use_censored_tail && dp.censored_final && dp.residence_times.back() > 0.0;

  // Count rows first.
  std::size_t n_rows = 0;
  for (const auto& r : records) n_rows += grid.neighbors(r.from).size();
  if (tail) n_rows += grid.neighbors(dp.cells.back()).size();

  DesignData d;
  const auto p = static_cast<Eigen::Index>(model.n_columns());
  d.X.resize(static_cast<Eigen::Index>(n_rows), p);
  d.z = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n_rows));
  d.offset.resize(static_cast<Eigen::Index>(n_rows));
  d.weight = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(n_rows));
  d.row_block.reserve(n_rows);
  d.row_dir.reserve(n_rows);
  d.column_names = model.column_names();
  d.column_groups = model.column_groups();
  d.penalized = model.penalized();
  d.block_start.push_back(0);

  Eigen::VectorXd base;
  Eigen::Index row = 0;
  UnitDirection prev = UnitDirection::zero();
  auto emit_block = [&](CellId from, const CellId* to, double entry, double residence) {
    if (!(residence > 0.0))
      throw DomainError(detail::concat("transition at time ", entry, " has non-positive residence ", residence));
    const auto nbs = grid.neighbors(from);
    if (nbs.empty()) throw DomainError(detail::concat("cell ", from.index, " has no available neighbors"));
    if (to && !nbs.find(*to))
      throw DomainError(detail::concat("destination cell ", to->index, " at time ", entry,
                                       " is not an available neighbor of cell ", from.index));
    const Eigen::VectorXd phi = model.basis_at(entry);
    const double log_tau = std::log(residence);
    const std::size_t b = d.block_time.size();
    for (const auto& nb : nbs) {
      model.base_values(from, nb, entry, prev, base);
      model.expand(base, phi, d.X.row(row));
      d.z[row] = (to && nb.cell == *to) ? 1.0 : 0.0;
      d.offset[row] = log_tau;
      d.row_block.push_back(b);
      d.row_dir.push_back(nb.dir);
      ++row;
    }
    d.block_time.push_back(entry);
    d.block_source.push_back(0);
    d.block_start.push_back(static_cast<std::size_t>(row));
  };

  for (std::size_t t = 0; t < n_trans; ++t) {
    const auto& r = records[t];
    emit_block(r.from, &r.to, r.entry_time, r.residence);
    prev = detail::move_direction(grid, r.from, r.to);
  }
  if (tail) emit_block(dp.cells.back(), nullptr, dp.clock_times.back(), dp.residence_times.back());
  return d;
}

inline DesignData build_design(const DiscretePath& dp, const RasterGrid& grid, const std::vector<CovariateSpec>& specs,
                               const SplineConfig& spline = {}, const DesignOptions& opt = {}) {
  return build_design(dp, CovariateModel(grid, specs, spline), opt);
}

// Direct CTMC log-likelihood of a discrete path, sum_t [log lambda_{i,next} - tau_t * lambda_i],
// with its gradient; evaluated transition by transition without the latent Poisson rows.
inline double path_loglik(const DiscretePath& dp, const CovariateModel& model, const Eigen::VectorXd& alpha,
                          Eigen::VectorXd* grad = nullptr) {
  const RasterGrid& grid = model.grid();
  const auto p = static_cast<Eigen::Index>(model.n_columns());
  if (alpha.size() != p) throw DomainError(detail::concat("alpha has ", alpha.size(), " entries, model has ", p));
  if (grad) grad->setZero(p);
  double ll = 0.0;
  UnitDirection prev = UnitDirection::zero();
  Eigen::RowVectorXd x(p), x_dest(p), weighted(p);
  for (const auto& r : transition_clock_times(dp)) {
    const auto nbs = grid.neighbors(r.from);
    double total = 0.0;
    weighted.setZero();
    bool found = false;
    for (const auto& nb : nbs) {
      model.fill_row(r.from, nb, r.entry_time, prev, x);
      const double lam = std::exp(x.dot(alpha));
      total += lam;
      if (grad) weighted += lam * x;
      if (nb.cell == r.to) {
        x_dest = x;
        found = true;
      }
    }
    if (!found) throw DomainError(detail::concat("destination ", r.to.index, " not adjacent to ", r.from.index));
    ll += x_dest.dot(alpha) - r.residence * total;
    if (grad) *grad += (x_dest - r.residence * weighted).transpose();
    prev = detail::move_direction(grid, r.from, r.to);
  }
  return ll;
}

}  // namespace ctds
