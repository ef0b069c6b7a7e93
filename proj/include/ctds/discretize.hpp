#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "ctds/ctcrw.hpp"
#include "ctds/error.hpp"
#include "ctds/grid.hpp"

namespace ctds {

// CTDS form of a path: ordered cell visits with entry clock times and residence times.
// The last visit is cut off by the end of the path (censored) when censored_final is set.
struct DiscretePath {
  std::vector<CellId> cells;
  std::vector<double> clock_times;      // entry time of each visit
  std::vector<double> residence_times;  // one per visit, the last one possibly censored
  double end_time = 0.0;  // residence_times.back() == end_time - clock_times.back()
  bool censored_final = true;

  std::size_t n_visits() const { return cells.size(); }
  double start_time() const { return clock_times.front(); }

  void validate(const RasterGrid& grid) const {
    if (cells.empty() || clock_times.size() != cells.size() || residence_times.size() != cells.size())
      throw DomainError("discrete path: cells, clock_times and residence_times must be non-empty and equal length");
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (!grid.contains(cells[i]) || !grid.valid(cells[i]))
        throw DomainError(detail::concat("discrete path: visit ", i, " is not a valid cell"));
      const bool tail = i + 1 == cells.size() && censored_final;
      if (tail ? !(residence_times[i] >= 0.0) : !(residence_times[i] > 0.0))
        throw DomainError(detail::concat("discrete path: residence time of visit ", i, " is ", residence_times[i]));
      if (i == 0) continue;
      if (!(clock_times[i] > clock_times[i - 1]))
        throw DomainError(detail::concat("discrete path: clock times not increasing at visit ", i));
      if (!grid.neighbors(cells[i - 1]).find(cells[i]))
        throw DomainError(detail::concat("discrete path: visits ", i - 1, " and ", i, " are not rook-adjacent"));
    }
  }
};

// One completed residence and the move that ended it.
struct TransitionRecord {
  CellId from;
  CellId to;
  double entry_time = 0.0;
  double residence = 0.0;
};

inline std::vector<TransitionRecord> transition_clock_times(const DiscretePath& dp) {
  std::vector<TransitionRecord> out;
  if (dp.cells.size() < 2) return out;
  out.reserve(dp.cells.size() - 1);
  for (std::size_t i = 0; i + 1 < dp.cells.size(); ++i)
    out.push_back({dp.cells[i], dp.cells[i + 1], dp.clock_times[i], dp.residence_times[i]});
  return out;
}

namespace detail {

struct Crossing {
  double s;       // segment parameter in (0, 1]
  bool vertical;  // crossing a vertical gridline (column change)
  int step;       // +1 or -1
};

inline void collect_crossings(double a, double b, bool vertical, std::vector<Crossing>& out) {
  const double fa = std::floor(a), fb = std::floor(b);
  if (fb > fa) {
    for (double k = fa + 1.0; k <= fb; k += 1.0) out.push_back({(k - a) / (b - a), vertical, +1});
  } else if (fb < fa) {
    for (double k = fa; k > fb; k -= 1.0) out.push_back({(k - a) / (b - a), vertical, -1});
  }
}

}  // namespace detail

// Walks the piecewise-linear path through the grid, emitting a visit at every
// gridline crossing (exact linear interpolation, vertical before horizontal on ties).
inline DiscretePath discretize(const ImputedPath& path, const RasterGrid& grid) {
  path.validate();
  auto cell_at = [&](double u, double v, double t) {
    const double col = std::floor(u), row = std::floor(v);
    if (!(col >= 0.0 && row >= 0.0 && col < static_cast<double>(grid.n_cols()) &&
          row < static_cast<double>(grid.n_rows())))
      throw DomainError(detail::concat("path leaves the grid at time ", t));
    const CellId c{static_cast<std::size_t>(row) * grid.n_cols() + static_cast<std::size_t>(col)};
    if (!grid.valid(c)) throw DomainError(detail::concat("path enters a NODATA cell at time ", t));
    return c;
  };

  DiscretePath dp;
  double ua = grid.col_coord(path.positions[0].x), va = grid.row_coord(path.positions[0].y);
  CellId current = cell_at(ua, va, path.times[0]);
  dp.cells.push_back(current);
  dp.clock_times.push_back(path.times[0]);

  std::vector<detail::Crossing> crossings;
  for (std::size_t k = 1; k < path.size(); ++k) {
    const double ub = grid.col_coord(path.positions[k].x), vb = grid.row_coord(path.positions[k].y);
    const double ta = path.times[k - 1], tb = path.times[k];
    crossings.clear();
    detail::collect_crossings(ua, ub, true, crossings);
    detail::collect_crossings(va, vb, false, crossings);
    std::stable_sort(crossings.begin(), crossings.end(), [](const auto& x, const auto& y) {
      if (x.s != y.s) return x.s < y.s;
      return x.vertical && !y.vertical;
    });
    auto col = static_cast<std::int64_t>(grid.col(current));
    auto row = static_cast<std::int64_t>(grid.row(current));
    for (const auto& c : crossings) {
      const double t = ta + c.s * (tb - ta);
      (c.vertical ? col : row) += c.step;
      if (col < 0 || row < 0 || col >= static_cast<std::int64_t>(grid.n_cols()) ||
          row >= static_cast<std::int64_t>(grid.n_rows()))
        throw DomainError(detail::concat("path leaves the grid at time ", t));
      const CellId next{static_cast<std::size_t>(row) * grid.n_cols() + static_cast<std::size_t>(col)};
      if (!grid.valid(next)) throw DomainError(detail::concat("path enters a NODATA cell at time ", t));
      current = next;
      // A start on a cell edge belongs to the cell the path heads into.
      if (dp.cells.size() == 1 && t == dp.clock_times[0]) {
        dp.cells[0] = next;
        continue;
      }
      dp.cells.push_back(next);
      dp.clock_times.push_back(t);
    }
    ua = ub;
    va = vb;
  }

  const std::size_t n = dp.cells.size();
  dp.residence_times.resize(n);
  for (std::size_t i = 0; i + 1 < n; ++i) dp.residence_times[i] = dp.clock_times[i + 1] - dp.clock_times[i];
  dp.end_time = path.times.back();
  dp.residence_times[n - 1] = dp.end_time - dp.clock_times[n - 1];
  dp.censored_final = true;
  return dp;
}

// Piecewise-constant cell-center trace of a discrete path; each move is encoded
// as two points sharing the move time so that discretize() recovers the path.
inline ImputedPath center_trace(const DiscretePath& dp, const RasterGrid& grid) {
  ImputedPath p;
  p.source_track = "trace";
  const std::size_t n = dp.n_visits();
  p.times.reserve(2 * n);
  p.positions.reserve(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    const Point c = grid.center(dp.cells[i]);
    p.times.push_back(dp.clock_times[i]);
    p.positions.push_back(c);
    const double exit = i + 1 < n ? dp.clock_times[i + 1] : dp.end_time;
    p.times.push_back(exit);
    p.positions.push_back(c);
  }
  return p;
}

}  // namespace ctds
