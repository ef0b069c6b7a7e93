#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <set>
#include <string>
#include <vector>

#include "ctds/design.hpp"
#include "ctds/error.hpp"
#include "ctds/glm.hpp"

namespace ctds {

inline constexpr double kZ975 = 1.959963984540054;

struct PooledFit {
  std::vector<std::string> names;
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;
  Eigen::MatrixXd within;
  Eigen::MatrixXd between;
  std::size_t K = 0;
  double correction = 1.0;  // factor on `between`

  Eigen::VectorXd standard_errors() const { return covariance.diagonal().cwiseMax(0.0).cwiseSqrt(); }
  Eigen::VectorXd lower() const { return mean - kZ975 * standard_errors(); }
  Eigen::VectorXd upper() const { return mean + kZ975 * standard_errors(); }
  // Interval excludes zero.
  bool starred(Eigen::Index j) const { return lower()[j] > 0.0 || upper()[j] < 0.0; }
};

namespace detail {

inline std::string describe_mismatch(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::set<std::string> sa(a.begin(), a.end()), sb(b.begin(), b.end());
  std::vector<std::string> diff;
  std::set_symmetric_difference(sa.begin(), sa.end(), sb.begin(), sb.end(), std::back_inserter(diff));
  std::string out;
  for (const auto& s : diff) out += (out.empty() ? "" : ", ") + s;
  if (out.empty()) out = "(same names, different order)";
  return out;
}

}  // namespace detail

// Combines per-imputation fits: mean of estimates, within = mean covariance,
// between = sample covariance of estimates, total = within + (1 + 1/K) between.
inline PooledFit pool(const std::vector<GlmFit>& fits, bool use_correction = true) {
  const std::size_t K = fits.size();
  if (K < 2) throw DomainError(detail::concat("pool needs at least 2 fits, got ", K));
  const auto& names = fits.front().names;
  for (std::size_t k = 1; k < K; ++k)
    if (fits[k].names != names)
      throw DomainError(detail::concat("pool: fit ", k, " has different columns; symmetric difference: ",
                                       detail::describe_mismatch(names, fits[k].names)));
  const Eigen::Index p = fits.front().beta_hat.size();
  PooledFit out;
  out.names = names;
  out.K = K;
  out.mean = Eigen::VectorXd::Zero(p);
  out.within = Eigen::MatrixXd::Zero(p, p);
  for (const auto& f : fits) {
    out.mean += f.beta_hat;
    out.within += f.covariance;
  }
  out.mean /= static_cast<double>(K);
  out.within /= static_cast<double>(K);
  out.between = Eigen::MatrixXd::Zero(p, p);
  for (const auto& f : fits) {
    const Eigen::VectorXd d = f.beta_hat - out.mean;
    out.between += d * d.transpose();
  }
  out.between /= static_cast<double>(K - 1);
  out.correction = use_correction ? 1.0 + 1.0 / static_cast<double>(K) : 1.0;
  out.covariance = out.within + out.correction * out.between;
  out.covariance = 0.5 * (out.covariance + out.covariance.transpose());
  return out;
}

// Row-concatenation with each input's weights scaled by 1/K; a single lasso fit on
// the result selects covariates jointly across imputations.
inline DesignData stack_designs(const std::vector<DesignData>& designs) {
  const std::size_t K = designs.size();
  if (K == 0) throw DomainError("stack_designs: no designs");
  const auto& names = designs.front().column_names;
  Eigen::Index rows = 0;
  for (std::size_t k = 0; k < K; ++k) {
    designs[k].validate();
    if (designs[k].column_names != names)
      throw DomainError(detail::concat("stack_designs: design ", k, " has different columns; symmetric difference: ",
                                       detail::describe_mismatch(names, designs[k].column_names)));
    rows += designs[k].n_rows();
  }
  const double w = 1.0 / static_cast<double>(K);
  DesignData out;
  out.X.resize(rows, designs.front().n_cols());
  out.z.resize(rows);
  out.offset.resize(rows);
  out.weight.resize(rows);
  out.column_names = names;
  out.column_groups = designs.front().column_groups;
  out.penalized = designs.front().penalized;
  out.block_start.push_back(0);
  Eigen::Index r = 0;
  std::size_t block0 = 0;
  for (std::size_t k = 0; k < K; ++k) {
    const auto& d = designs[k];
    const auto n = d.n_rows();
    out.X.middleRows(r, n) = d.X;
    out.z.segment(r, n) = d.z;
    out.offset.segment(r, n) = d.offset;
    out.weight.segment(r, n) = d.weight * w;
    for (Eigen::Index i = 0; i < n; ++i) {
      out.row_block.push_back(block0 + d.row_block[static_cast<std::size_t>(i)]);
      out.row_dir.push_back(d.row_dir[static_cast<std::size_t>(i)]);
    }
    for (std::size_t b = 0; b < d.n_blocks(); ++b) {
      out.block_start.push_back(static_cast<std::size_t>(r) + d.block_start[b + 1]);
      out.block_time.push_back(d.block_time[b]);
      out.block_source.push_back(k);
    }
    r += n;
    block0 += d.n_blocks();
  }
  return out;
}

}  // namespace ctds
