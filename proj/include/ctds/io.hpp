#pragma once

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ctds/ctcrw.hpp"
#include "ctds/design.hpp"
#include "ctds/discretize.hpp"
#include "ctds/error.hpp"
#include "ctds/glm.hpp"
#include "ctds/lasso.hpp"
#include "ctds/mcmc.hpp"
#include "ctds/pool.hpp"
#include "ctds/simulate.hpp"

namespace ctds {

using json = nlohmann::ordered_json;

class IoError : public Error {
 public:
  using Error::Error;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream ss(line);
  while (std::getline(ss, cur, ',')) out.push_back(trim(cur));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline double parse_double(const std::string& s, const std::string& where) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (...) {
    used = 0;
  }
  if (used == 0 || used != s.size()) throw IoError(detail::concat(where, ": cannot parse number '", s, "'"));
  return v;
}

// Days since 1970-01-01 of a proleptic Gregorian date.
constexpr long long days_from_civil(long long y, unsigned m, unsigned d) {
  y -= m <= 2;
  const long long era = (y >= 0 ? y : y - 399) / 400;
  const auto yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<long long>(doe) - 719468;
}

inline std::ifstream open_in(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError(detail::concat("cannot open '", path, "' for reading"));
  return in;
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError(detail::concat("cannot open '", path, "' for writing"));
  out << std::setprecision(17);
  return out;
}

// Header check: returns column index by name.
inline std::map<std::string, std::size_t> header_index(const std::string& line, const std::vector<std::string>& required,
                                                       const std::string& source) {
  const auto cols = split_csv(line);
  std::map<std::string, std::size_t> idx;
  for (std::size_t i = 0; i < cols.size(); ++i) idx[cols[i]] = i;
  for (const auto& r : required)
    if (!idx.count(r)) throw IoError(detail::concat(source, ": header lacks column '", r, "'"));
  return idx;
}

}  // namespace detail

// Seconds since the epoch: a plain number, or ISO-8601 UTC "YYYY-MM-DDTHH:MM:SS[.fff][Z]".
inline double parse_time(const std::string& s, const std::string& where = "time") {
  const std::string t = detail::trim(s);
  if (t.size() >= 10 && t[4] == '-' && t[7] == '-') {
    int y = 0, mo = 0, d = 0, h = 0, mi = 0;
    double sec = 0.0;
    char sep = 0;
    int consumed = 0;
    const int n = std::sscanf(t.c_str(), "%4d-%2d-%2d%c%2d:%2d:%lf%n", &y, &mo, &d, &sep, &h, &mi, &sec, &consumed);
    bool ok = false;
    if (n == 3 && t.size() == 10) {
      ok = true;
    } else if (n >= 7 && (sep == 'T' || sep == ' ')) {
      const std::string rest = t.substr(static_cast<std::size_t>(consumed));
      ok = rest.empty() || rest == "Z" || rest == "+00:00";
    }
    if (!ok || mo < 1 || mo > 12 || d < 1 || d > 31 || h > 23 || mi > 59 || sec < 0.0 || sec >= 61.0)
      throw IoError(detail::concat(where, ": cannot parse timestamp '", s, "'"));
    if (n == 3) h = mi = 0, sec = 0.0;
    return static_cast<double>(detail::days_from_civil(y, static_cast<unsigned>(mo), static_cast<unsigned>(d))) * 86400.0 +
           h * 3600.0 + mi * 60.0 + sec;
  }
  return detail::parse_double(t, where);
}

// Telemetry CSV `id,time,x,y`; tracks keep their order of first appearance and
// fixes are sorted by time.
inline std::vector<Track> read_tracks_csv(std::istream& in, const std::string& source = "telemetry") {
  std::string line;
  if (!std::getline(in, line)) throw IoError(detail::concat(source, ": empty file"));
  const auto idx = detail::header_index(line, {"id", "time", "x", "y"}, source);
  std::vector<Track> tracks;
  std::map<std::string, std::size_t> pos;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    const auto f = detail::split_csv(line);
    const std::string where = detail::concat(source, ":", lineno);
    if (f.size() < idx.size()) throw IoError(detail::concat(where, ": expected ", idx.size(), " fields, got ", f.size()));
    const std::string id = f[idx.at("id")];
    auto it = pos.find(id);
    if (it == pos.end()) {
      it = pos.emplace(id, tracks.size()).first;
      tracks.push_back(Track{id, {}, {}});
    }
    Track& tr = tracks[it->second];
    tr.times.push_back(parse_time(f[idx.at("time")], where));
    tr.positions.push_back({detail::parse_double(f[idx.at("x")], where), detail::parse_double(f[idx.at("y")], where)});
  }
  for (auto& tr : tracks) {
    std::vector<std::size_t> order(tr.times.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return tr.times[a] < tr.times[b]; });
    Track s{tr.id, {}, {}};
    for (auto i : order) {
      s.times.push_back(tr.times[i]);
      s.positions.push_back(tr.positions[i]);
    }
    tr = std::move(s);
  }
  return tracks;
}

inline std::vector<Track> read_tracks_csv(const std::string& path) {
  auto in = detail::open_in(path);
  return read_tracks_csv(in, path);
}

inline void write_track_csv(std::ostream& out, const std::vector<Track>& tracks) {
  out << "id,time,x,y\n";
  for (const auto& t : tracks)
    for (std::size_t i = 0; i < t.size(); ++i)
      out << t.id << ',' << t.times[i] << ',' << t.positions[i].x << ',' << t.positions[i].y << '\n';
}

inline void write_imputed_csv(std::ostream& out, const ImputedPath& p, std::size_t draw) {
  out << "draw,time,x,y\n";
  for (std::size_t i = 0; i < p.size(); ++i)
    out << draw << ',' << p.times[i] << ',' << p.positions[i].x << ',' << p.positions[i].y << '\n';
}

inline ImputedPath read_imputed_csv(std::istream& in, const std::string& source = "imputed path") {
  std::string line;
  if (!std::getline(in, line)) throw IoError(detail::concat(source, ": empty file"));
  const auto idx = detail::header_index(line, {"time", "x", "y"}, source);
  ImputedPath p;
  p.source_track = source;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    const auto f = detail::split_csv(line);
    const std::string where = detail::concat(source, ":", lineno);
    if (f.size() < idx.size()) throw IoError(detail::concat(where, ": expected ", idx.size(), " fields"));
    p.times.push_back(detail::parse_double(f[idx.at("time")], where));
    p.positions.push_back({detail::parse_double(f[idx.at("x")], where), detail::parse_double(f[idx.at("y")], where)});
  }
  p.validate();
  return p;
}

inline ImputedPath read_imputed_csv(const std::string& path) {
  auto in = detail::open_in(path);
  return read_imputed_csv(in, path);
}

inline void write_discrete_csv(std::ostream& out, const DiscretePath& dp) {
  out << "visit,cell,entry_time,residence,censored\n";
  for (std::size_t i = 0; i < dp.n_visits(); ++i) {
    const bool cens = dp.censored_final && i + 1 == dp.n_visits();
    out << i << ',' << dp.cells[i].index << ',' << dp.clock_times[i] << ',' << dp.residence_times[i] << ','
        << (cens ? 1 : 0) << '\n';
  }
}

inline DiscretePath read_discrete_csv(std::istream& in, const std::string& source = "discrete path") {
  std::string line;
  if (!std::getline(in, line)) throw IoError(detail::concat(source, ": empty file"));
  const auto idx = detail::header_index(line, {"cell", "entry_time", "residence", "censored"}, source);
  DiscretePath dp;
  dp.censored_final = false;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    const auto f = detail::split_csv(line);
    const std::string where = detail::concat(source, ":", lineno);
    if (f.size() < idx.size()) throw IoError(detail::concat(where, ": expected ", idx.size(), " fields"));
    dp.cells.push_back(CellId{static_cast<std::size_t>(detail::parse_double(f[idx.at("cell")], where))});
    dp.clock_times.push_back(detail::parse_double(f[idx.at("entry_time")], where));
    dp.residence_times.push_back(detail::parse_double(f[idx.at("residence")], where));
    dp.censored_final = detail::parse_double(f[idx.at("censored")], where) != 0.0;
  }
  if (dp.cells.empty()) throw IoError(detail::concat(source, ": no visits"));
  dp.end_time = dp.clock_times.back() + dp.residence_times.back();
  return dp;
}

inline DiscretePath read_discrete_csv(const std::string& path) {
  auto in = detail::open_in(path);
  return read_discrete_csv(in, path);
}

inline void write_design_csv(std::ostream& out, const DesignData& d) {
  out << "row,t_index,neighbor_dir,z,offset";
  for (const auto& n : d.column_names) out << ',' << n;
  out << '\n';
  for (Eigen::Index r = 0; r < d.n_rows(); ++r) {
    out << r << ',' << d.row_block[static_cast<std::size_t>(r)] << ','
        << rook_name(d.row_dir[static_cast<std::size_t>(r)]) << ',' << d.z[r] << ',' << d.offset[r];
    for (Eigen::Index j = 0; j < d.n_cols(); ++j) out << ',' << d.X(r, j);
    out << '\n';
  }
}

inline void write_chain_csv(std::ostream& out, const McmcChain& c) {
  out << "iter";
  for (const auto& n : c.names) out << ',' << n;
  out << '\n';
  for (Eigen::Index i = 0; i < c.draws.rows(); ++i) {
    out << i;
    for (Eigen::Index j = 0; j < c.draws.cols(); ++j) out << ',' << c.draws(i, j);
    out << '\n';
  }
}

inline void write_recovery_csv(std::ostream& out, const RecoverySummary& s) {
  out << "covariate,true,prop_nonzero,prop_zero,min,max\n";
  for (const auto& r : s.rows)
    out << r.covariate << ',' << r.truth << ',' << r.prop_nonzero << ',' << r.prop_zero << ',' << r.min << ',' << r.max
        << '\n';
}

inline json params_json(const CtcrwFit& f) {
  json j;
  j["gamma_ou"] = f.params.gamma_ou;
  j["sigma_ou"] = f.params.sigma_ou;
  j["mu_x"] = f.params.mu.x;
  j["mu_y"] = f.params.mu.y;
  j["obs_sd"] = f.params.obs_sd;
  j["loglik"] = f.loglik;
  j["converged"] = f.converged;
  j["iterations"] = f.iterations;
  return j;
}

inline CtcrwParams params_from_json(const json& j) {
  CtcrwParams p;
  p.gamma_ou = j.at("gamma_ou").get<double>();
  p.sigma_ou = j.at("sigma_ou").get<double>();
  p.mu = {j.value("mu_x", 0.0), j.value("mu_y", 0.0)};
  p.obs_sd = j.value("obs_sd", 0.0);
  p.validate();
  return p;
}

// Coefficient table: estimate, s.e., 95% interval, starred when the interval excludes zero.
inline json coefficient_table(const std::vector<std::string>& names, const Eigen::VectorXd& est,
                              const Eigen::VectorXd& se, const Eigen::VectorXd& lo, const Eigen::VectorXd& hi) {
  json rows = json::array();
  for (std::size_t j = 0; j < names.size(); ++j) {
    const auto k = static_cast<Eigen::Index>(j);
    json r;
    r["covariate"] = names[j];
    r["estimate"] = est[k];
    r["se"] = se[k];
    r["lower"] = lo[k];
    r["upper"] = hi[k];
    r["starred"] = lo[k] > 0.0 || hi[k] < 0.0;
    rows.push_back(r);
  }
  return rows;
}

inline json pooled_json(const PooledFit& p) {
  json j;
  j["K"] = p.K;
  j["between_correction"] = p.correction;
  j["coefficients"] = coefficient_table(p.names, p.mean, p.standard_errors(), p.lower(), p.upper());
  return j;
}

inline json chain_summary_json(const McmcChain& c) {
  const Eigen::VectorXd m = c.mean(), s = c.sd(), e = mcse(c);
  Eigen::VectorXd lo(m.size()), hi(m.size());
  for (Eigen::Index j = 0; j < m.size(); ++j) {
    lo[j] = c.quantile(j, 0.025);
    hi[j] = c.quantile(j, 0.975);
  }
  json j;
  j["n_draws"] = c.n_draws();
  j["acceptance_rate"] = c.acceptance_rate;
  j["seed"] = c.seed;
  j["coefficients"] = coefficient_table(c.names, m, s, lo, hi);
  for (std::size_t k = 0; k < c.names.size(); ++k) j["coefficients"][k]["mcse"] = e[static_cast<Eigen::Index>(k)];
  return j;
}

inline json lasso_json(const LassoFit& f) {
  json j;
  j["gamma_lasso"] = f.penalty;
  j["gamma_max"] = f.gamma_max;
  j["kkt_residual"] = f.kkt_residual;
  json coefs = json::array();
  for (std::size_t k = 0; k < f.names.size(); ++k)
    coefs.push_back({{"covariate", f.names[k]}, {"estimate", f.beta_hat[static_cast<Eigen::Index>(k)]}});
  j["coefficients"] = coefs;
  if (f.cv_curve) {
    json cv;
    cv["gamma"] = f.cv_curve->gammas;
    cv["mean_deviance"] = f.cv_curve->mean_deviance;
    cv["se_deviance"] = f.cv_curve->sd_deviance;
    cv["index_min"] = f.cv_curve->index_min;
    cv["index_1se"] = f.cv_curve->index_1se;
    j["cv_curve"] = cv;
  }
  return j;
}

// beta_s(t) at each hour of the spline period for time-varying specs, with
// Gaussian 95% bands from the coefficient covariance.
inline void write_beta_curves_csv(std::ostream& out, const CovariateModel& m, const Eigen::VectorXd& mean,
                                  const Eigen::MatrixXd& cov) {
  out << "covariate,hour,estimate,se,lower,upper\n";
  const auto& specs = m.specs();
  const int hours = static_cast<int>(std::llround(m.spline().period / 3600.0));
  for (std::size_t s = 0; s < specs.size(); ++s) {
    if (!specs[s].time_varying) continue;
    const auto c0 = static_cast<Eigen::Index>(m.first_column(s));
    for (int h = 0; h < hours; ++h) {
      const Eigen::VectorXd phi = spline_basis(m.spline(), h * 3600.0);
      const auto n = phi.size();
      const double est = mean.segment(c0, n).dot(phi);
      const double var = phi.dot(cov.block(c0, c0, n, n) * phi);
      const double se = std::sqrt(std::max(0.0, var));
      out << specs[s].name << ',' << h << ',' << est << ',' << se << ',' << est - kZ975 * se << ',' << est + kZ975 * se
          << '\n';
    }
  }
}

}  // namespace ctds
