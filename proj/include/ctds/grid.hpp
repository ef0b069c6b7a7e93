#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ctds/error.hpp"

namespace ctds {

struct Point {
  double x = 0.0;
  double y = 0.0;
};

struct CellId {
  std::size_t index = 0;
  friend bool operator==(CellId, CellId) = default;
  friend auto operator<=>(CellId, CellId) = default;
};

// Unit vector, or exactly (0, 0) for "no direction".
struct UnitDirection {
  double dx = 0.0;
  double dy = 0.0;

  static UnitDirection zero() { return {}; }

  // Normalizes (x, y); the null vector maps to zero().
  static UnitDirection from(double x, double y) {
    const double norm = std::hypot(x, y);
    if (!(norm > 0.0)) return {};
    return {x / norm, y / norm};
  }

  bool is_zero() const { return dx == 0.0 && dy == 0.0; }
  UnitDirection operator-() const { return {-dx, -dy}; }
  double dot(const UnitDirection& o) const { return dx * o.dx + dy * o.dy; }
  friend bool operator==(const UnitDirection&, const UnitDirection&) = default;
};

// Rook directions in the fixed order used everywhere: E, N, W, S.
enum class RookDir : std::uint8_t { East = 0, North = 1, West = 2, South = 3 };

inline UnitDirection rook_vector(RookDir d) {
  static constexpr std::array<std::array<double, 2>, 4> kVec{{{1, 0}, {0, 1}, {-1, 0}, {0, -1}}};
  const auto& v = kVec[static_cast<std::size_t>(d)];
  return {v[0], v[1]};
}

inline const char* rook_name(RookDir d) {
  static constexpr std::array<const char*, 4> kName{"E", "N", "W", "S"};
  return kName[static_cast<std::size_t>(d)];
}

struct Neighbor {
  CellId cell;
  RookDir dir = RookDir::East;
  UnitDirection w;  // from source center to neighbor center
};

// At most four entries; avoids a heap allocation per query.
class NeighborList {
 public:
  void push(const Neighbor& n) { items_[size_++] = n; }
  std::size_t size() const { return size_; }
  bool empty() const { return size_ == 0; }
  const Neighbor& operator[](std::size_t i) const { return items_[i]; }
  const Neighbor* begin() const { return items_.data(); }
  const Neighbor* end() const { return items_.data() + size_; }

  std::optional<std::size_t> find(CellId c) const {
    for (std::size_t i = 0; i < size_; ++i)
      if (items_[i].cell == c) return i;
    return std::nullopt;
  }

 private:
  std::array<Neighbor, 4> items_{};
  std::size_t size_ = 0;
};

using Mask = std::vector<bool>;

// Raster-backed study area. Cells are row-major with row 0 at the southern
// edge, so the center of (row, col) is origin + ((col + .5), (row + .5)) * cell_size.
// Cells flagged invalid (NODATA) are never occupied and never adjacent.
class RasterGrid {
 public:
  RasterGrid(std::size_t n_rows, std::size_t n_cols, double cell_size, double origin_x = 0.0,
             double origin_y = 0.0)
      : n_rows_(n_rows),
        n_cols_(n_cols),
        cell_size_(cell_size),
        origin_x_(origin_x),
        origin_y_(origin_y),
        valid_(n_rows * n_cols, true) {
    if (n_rows == 0 || n_cols == 0) throw DomainError("RasterGrid: n_rows and n_cols must be positive");
    if (!(cell_size > 0.0) || !std::isfinite(cell_size))
      throw DomainError(detail::concat("RasterGrid: cell_size must be positive, got ", cell_size));
  }

  std::size_t n_rows() const { return n_rows_; }
  std::size_t n_cols() const { return n_cols_; }
  std::size_t n_cells() const { return n_rows_ * n_cols_; }
  double cell_size() const { return cell_size_; }
  double origin_x() const { return origin_x_; }
  double origin_y() const { return origin_y_; }

  CellId cell(std::size_t row, std::size_t col) const {
    if (row >= n_rows_ || col >= n_cols_)
      throw DomainError(detail::concat("cell (", row, ", ", col, ") outside ", n_rows_, "x", n_cols_, " grid"));
    return CellId{row * n_cols_ + col};
  }
  std::size_t row(CellId c) const { return check(c).index / n_cols_; }
  std::size_t col(CellId c) const { return check(c).index % n_cols_; }

  Point center(CellId c) const {
    return {origin_x_ + (static_cast<double>(col(c)) + 0.5) * cell_size_,
            origin_y_ + (static_cast<double>(row(c)) + 0.5) * cell_size_};
  }

  // Continuous (col, row) coordinates in cell units; integer values lie on gridlines.
  double col_coord(double x) const { return (x - origin_x_) / cell_size_; }
  double row_coord(double y) const { return (y - origin_y_) / cell_size_; }

  // Cell containing p (points on a gridline belong to the cell east/north of it).
  std::optional<CellId> locate(Point p) const {
    const double u = std::floor(col_coord(p.x));
    const double v = std::floor(row_coord(p.y));
    if (!(u >= 0.0) || !(v >= 0.0) || u >= static_cast<double>(n_cols_) || v >= static_cast<double>(n_rows_))
      return std::nullopt;
    return CellId{static_cast<std::size_t>(v) * n_cols_ + static_cast<std::size_t>(u)};
  }

  bool contains(CellId c) const { return c.index < n_cells(); }
  bool valid(CellId c) const { return valid_[check(c).index]; }
  const Mask& valid_mask() const { return valid_; }

  void set_valid_mask(Mask mask) {
    if (mask.size() != n_cells())
      throw DomainError(detail::concat("valid mask has ", mask.size(), " values, grid has ", n_cells()));
    valid_ = std::move(mask);
  }

  void add_layer(const std::string& name, std::vector<double> values) {
    if (values.size() != n_cells())
      throw DomainError(detail::concat("layer '", name, "' has ", values.size(), " values, grid has ", n_cells()));
    layers_[name] = std::move(values);
  }

  bool has_layer(const std::string& name) const { return layers_.count(name) != 0; }

  const std::vector<double>& layer(const std::string& name) const {
    auto it = layers_.find(name);
    if (it == layers_.end()) throw DomainError(detail::concat("missing layer '", name, "'"));
    return it->second;
  }

  std::vector<std::string> layer_names() const {
    std::vector<std::string> out;
    for (const auto& [k, _] : layers_) out.push_back(k);
    return out;
  }

  // Rook neighbors in E, N, W, S order; off-grid and NODATA cells are skipped.
  NeighborList neighbors(CellId c) const {
    check(c);
    NeighborList out;
    const std::size_t r = c.index / n_cols_;
    const std::size_t q = c.index % n_cols_;
    auto add = [&](bool inside, std::size_t idx, RookDir d) {
      if (inside && valid_[idx]) out.push({CellId{idx}, d, rook_vector(d)});
    };
    add(q + 1 < n_cols_, c.index + 1, RookDir::East);
    add(r + 1 < n_rows_, c.index + n_cols_, RookDir::North);
    add(q > 0, c.index - 1, RookDir::West);
    add(r > 0, c.index - n_cols_, RookDir::South);
    return out;
  }

 private:
  CellId check(CellId c) const {
    if (c.index >= n_cells())
      throw DomainError(detail::concat("cell index ", c.index, " out of range for ", n_cells(), " cells"));
    return c;
  }

  std::size_t n_rows_;
  std::size_t n_cols_;
  double cell_size_;
  double origin_x_;
  double origin_y_;
  Mask valid_;
  std::map<std::string, std::vector<double>> layers_;
};

inline NeighborList neighbors(const RasterGrid& grid, CellId cell) { return grid.neighbors(cell); }

// Nonzero, finite layer values become true.
inline Mask mask_from_layer(const std::vector<double>& layer) {
  Mask m(layer.size());
  for (std::size_t i = 0; i < layer.size(); ++i) m[i] = std::isfinite(layer[i]) && layer[i] != 0.0;
  return m;
}

namespace detail {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// Lower envelope of parabolas (Felzenszwalb & Huttenlocher): out[q] = min_p (q-p)^2 + f[p].
inline void squared_distance_1d(const std::vector<double>& f, std::vector<double>& out,
                                std::vector<std::size_t>& v, std::vector<double>& z) {
  const std::size_t n = f.size();
  v.resize(n);
  z.resize(n + 1);
  std::ptrdiff_t k = -1;
  for (std::size_t q = 0; q < n; ++q) {
    if (f[q] == kInf) continue;
    const double fq = f[q] + static_cast<double>(q) * static_cast<double>(q);
    double s = -kInf;
    while (k >= 0) {
      const double p = static_cast<double>(v[k]);
      s = (fq - (f[v[k]] + p * p)) / (2.0 * static_cast<double>(q) - 2.0 * p);
      if (s <= z[k]) {
        --k;
      } else {
        break;
      }
    }
    if (k < 0) {
      k = 0;
      v[0] = q;
      z[0] = -kInf;
      z[1] = kInf;
    } else {
      ++k;
      v[k] = q;
      z[k] = s;
      z[k + 1] = kInf;
    }
  }
  out.assign(n, kInf);
  if (k < 0) return;
  std::size_t j = 0;
  for (std::size_t q = 0; q < n; ++q) {
    while (z[j + 1] < static_cast<double>(q)) ++j;
    const double d = static_cast<double>(q) - static_cast<double>(v[j]);
    out[q] = d * d + f[v[j]];
  }
}

// Exact squared Euclidean distance transform in cell units (integers stored as doubles).
inline std::vector<double> squared_edt(const RasterGrid& grid, const Mask& feature) {
  if (feature.size() != grid.n_cells())
    throw DomainError(detail::concat("feature mask has ", feature.size(), " values, grid has ", grid.n_cells()));
  if (std::none_of(feature.begin(), feature.end(), [](bool b) { return b; }))
    throw DomainError("no feature cells");
  const std::size_t nr = grid.n_rows(), nc = grid.n_cols();
  std::vector<double> g(grid.n_cells(), kInf);
  // Column pass.
  for (std::size_t c = 0; c < nc; ++c) {
    double last = kInf;
    for (std::size_t r = 0; r < nr; ++r) {
      if (feature[r * nc + c]) last = static_cast<double>(r);
      if (last != kInf) {
        const double d = static_cast<double>(r) - last;
        g[r * nc + c] = d * d;
      }
    }
    last = kInf;
    for (std::size_t r = nr; r-- > 0;) {
      if (feature[r * nc + c]) last = static_cast<double>(r);
      if (last != kInf) {
        const double d = last - static_cast<double>(r);
        g[r * nc + c] = std::min(g[r * nc + c], d * d);
      }
    }
  }
  // Row pass.
  std::vector<double> f(nc), out;
  std::vector<std::size_t> v;
  std::vector<double> z;
  std::vector<double> d2(grid.n_cells());
  for (std::size_t r = 0; r < nr; ++r) {
    for (std::size_t c = 0; c < nc; ++c) f[c] = g[r * nc + c];
    squared_distance_1d(f, out, v, z);
    for (std::size_t c = 0; c < nc; ++c) d2[r * nc + c] = out[c];
  }
  return d2;
}

// Smallest-index feature cell at squared cell distance d2 from (r, c).
inline std::size_t nearest_feature_index(const RasterGrid& grid, const Mask& feature, std::size_t r, std::size_t c,
                                         double d2) {
  const auto nr = static_cast<std::int64_t>(grid.n_rows());
  const auto nc = static_cast<std::int64_t>(grid.n_cols());
  const auto target = static_cast<std::int64_t>(std::llround(d2));
  const auto radius = static_cast<std::int64_t>(std::floor(std::sqrt(static_cast<double>(target))));
  std::size_t best = std::numeric_limits<std::size_t>::max();
  for (std::int64_t dx = -radius; dx <= radius; ++dx) {
    const std::int64_t rem = target - dx * dx;
    if (rem < 0) continue;
    auto dy = static_cast<std::int64_t>(std::llround(std::sqrt(static_cast<double>(rem))));
    if (dy * dy != rem) continue;
    for (std::int64_t sgn : {-1, 1}) {
      const std::int64_t rr = static_cast<std::int64_t>(r) + sgn * dy;
      const std::int64_t cc = static_cast<std::int64_t>(c) + dx;
      if (rr < 0 || rr >= nr || cc < 0 || cc >= nc) continue;
      const auto idx = static_cast<std::size_t>(rr * nc + cc);
      if (feature[idx]) best = std::min(best, idx);
      if (dy == 0) break;
    }
  }
  return best;
}

}  // namespace detail

// Center-to-center Euclidean distance (grid units, e.g. meters) to the nearest feature cell.
inline std::vector<double> distance_to_feature(const RasterGrid& grid, const Mask& feature_mask) {
  auto d2 = detail::squared_edt(grid, feature_mask);
  for (auto& d : d2) d = std::sqrt(d) * grid.cell_size();
  return d2;
}

// Unit vector toward the nearest feature cell's center; zero inside features.
// Ties go to the smallest cell index.
inline std::vector<UnitDirection> bearing_to_nearest_feature(const RasterGrid& grid, const Mask& feature_mask) {
  const auto d2 = detail::squared_edt(grid, feature_mask);
  std::vector<UnitDirection> out(grid.n_cells());
  const std::size_t nc = grid.n_cols();
  for (std::size_t i = 0; i < grid.n_cells(); ++i) {
    if (d2[i] == 0.0) continue;
    const std::size_t r = i / nc, c = i % nc;
    const std::size_t j = detail::nearest_feature_index(grid, feature_mask, r, c, d2[i]);
    const double dx = static_cast<double>(j % nc) - static_cast<double>(c);
    const double dy = static_cast<double>(j / nc) - static_cast<double>(r);
    out[i] = UnitDirection::from(dx, dy);
  }
  return out;
}

}  // namespace ctds
