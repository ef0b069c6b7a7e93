#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "ctds/error.hpp"
#include "ctds/grid.hpp"

namespace ctds {

// ESRI ASCII grid: header (ncols, nrows, xllcorner|xllcenter, yllcorner|yllcenter,
// cellsize, optional NODATA_value) followed by values, north row first.
struct AsciiRaster {
  std::size_t n_rows = 0;
  std::size_t n_cols = 0;
  double xll = 0.0;
  double yll = 0.0;
  double cell_size = 0.0;
  double nodata = -9999.0;
  bool has_nodata = false;
  std::vector<double> values;  // row-major, row 0 = south (already flipped)
  std::vector<bool> is_nodata;
};

inline AsciiRaster parse_ascii_raster(std::istream& in, const std::string& source = "<stream>") {
  AsciiRaster r;
  bool center_x = false, center_y = false;
  bool seen_cols = false, seen_rows = false, seen_x = false, seen_y = false, seen_cell = false;
  std::string key;
  // Header: keyword/value pairs until the first numeric token.
  while (in >> std::ws && in.peek() != EOF && std::isalpha(in.peek())) {
    in >> key;
    std::string lower(key.size(), ' ');
    std::transform(key.begin(), key.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
    double value = 0.0;
    if (!(in >> value)) throw DomainError(detail::concat(source, ": bad header value for '", key, "'"));
    if (lower == "ncols") {
      r.n_cols = static_cast<std::size_t>(value);
      seen_cols = true;
    } else if (lower == "nrows") {
      r.n_rows = static_cast<std::size_t>(value);
      seen_rows = true;
    } else if (lower == "xllcorner" || lower == "xllcenter") {
      r.xll = value;
      center_x = lower == "xllcenter";
      seen_x = true;
    } else if (lower == "yllcorner" || lower == "yllcenter") {
      r.yll = value;
      center_y = lower == "yllcenter";
      seen_y = true;
    } else if (lower == "cellsize") {
      r.cell_size = value;
      seen_cell = true;
    } else if (lower == "nodata_value") {
      r.nodata = value;
      r.has_nodata = true;
    } else {
      throw DomainError(detail::concat(source, ": unknown header key '", key, "'"));
    }
  }
  if (!(seen_cols && seen_rows && seen_x && seen_y && seen_cell))
    throw DomainError(detail::concat(source, ": incomplete ESRI ASCII header"));
  if (center_x) r.xll -= 0.5 * r.cell_size;
  if (center_y) r.yll -= 0.5 * r.cell_size;

  const std::size_t n = r.n_rows * r.n_cols;
  std::vector<double> file_order;
  file_order.reserve(n);
  double v = 0.0;
  while (file_order.size() < n && in >> v) file_order.push_back(v);
  if (file_order.size() != n)
    throw DomainError(detail::concat(source, ": expected ", n, " values, read ", file_order.size()));

  r.values.resize(n);
  r.is_nodata.resize(n);
  for (std::size_t fr = 0; fr < r.n_rows; ++fr) {
    const std::size_t row = r.n_rows - 1 - fr;
    for (std::size_t c = 0; c < r.n_cols; ++c) {
      const double x = file_order[fr * r.n_cols + c];
      const bool nd = r.has_nodata && x == r.nodata;
      r.values[row * r.n_cols + c] = nd ? std::nan("") : x;
      r.is_nodata[row * r.n_cols + c] = nd;
    }
  }
  return r;
}

inline AsciiRaster read_ascii_raster(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DomainError(detail::concat("cannot open raster '", path, "'"));
  return parse_ascii_raster(in, path);
}

// New grid whose valid mask is the raster's non-NODATA cells, with the values as `layer_name`.
inline RasterGrid grid_from_ascii(const AsciiRaster& r, const std::string& layer_name) {
  RasterGrid grid(r.n_rows, r.n_cols, r.cell_size, r.xll, r.yll);
  Mask valid(r.is_nodata.size());
  for (std::size_t i = 0; i < valid.size(); ++i) valid[i] = !r.is_nodata[i];
  grid.set_valid_mask(std::move(valid));
  grid.add_layer(layer_name, r.values);
  return grid;
}

// Adds a raster as a layer; geometry must match. NODATA cells become invalid.
inline void add_ascii_layer(RasterGrid& grid, const AsciiRaster& r, const std::string& layer_name) {
  const double tol = 1e-9 * std::max(1.0, grid.cell_size());
  if (r.n_rows != grid.n_rows() || r.n_cols != grid.n_cols() || std::abs(r.cell_size - grid.cell_size()) > tol ||
      std::abs(r.xll - grid.origin_x()) > tol || std::abs(r.yll - grid.origin_y()) > tol)
    throw DomainError(detail::concat("layer '", layer_name, "' geometry does not match the base grid"));
  Mask valid = grid.valid_mask();
  for (std::size_t i = 0; i < valid.size(); ++i) valid[i] = valid[i] && !r.is_nodata[i];
  grid.set_valid_mask(std::move(valid));
  grid.add_layer(layer_name, r.values);
}

inline void write_ascii_raster(std::ostream& out, const RasterGrid& grid, const std::vector<double>& values,
                               double nodata = -9999.0) {
  out << "ncols " << grid.n_cols() << "\n"
      << "nrows " << grid.n_rows() << "\n"
      << std::setprecision(17) << "xllcorner " << grid.origin_x() << "\n"
      << "yllcorner " << grid.origin_y() << "\n"
      << "cellsize " << grid.cell_size() << "\n"
      << "NODATA_value " << nodata << "\n";
  for (std::size_t fr = 0; fr < grid.n_rows(); ++fr) {
    const std::size_t row = grid.n_rows() - 1 - fr;
    for (std::size_t c = 0; c < grid.n_cols(); ++c) {
      const std::size_t i = row * grid.n_cols() + c;
      const double v = (!grid.valid_mask()[i] || !std::isfinite(values[i])) ? nodata : values[i];
      out << (c ? " " : "") << v;
    }
    out << "\n";
  }
}

inline void write_ascii_raster(const std::string& path, const RasterGrid& grid, const std::vector<double>& values) {
  std::ofstream out(path);
  if (!out) throw DomainError(detail::concat("cannot write raster '", path, "'"));
  write_ascii_raster(out, grid, values);
}

}  // namespace ctds
