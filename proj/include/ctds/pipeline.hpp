#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ctds/ctcrw.hpp"
#include "ctds/design.hpp"
#include "ctds/discretize.hpp"
#include "ctds/error.hpp"
#include "ctds/glm.hpp"
#include "ctds/mcmc.hpp"
#include "ctds/parallel.hpp"
#include "ctds/pool.hpp"
#include "ctds/rng.hpp"

namespace ctds {

struct ImputationConfig {
  std::size_t K = 10;
  double delta = 60.0;  // imputation time step, seconds
  std::uint64_t seed = 1;
  std::size_t threads = 1;
  int max_redraws = 20;  // per imputation, for draws that leave the grid
  DesignOptions design{};
};

struct ImputationSet {
  CtcrwParams params;
  std::vector<ImputedPath> paths;
  std::vector<DiscretePath> discrete;
  std::vector<DesignData> designs;
  std::size_t redraws = 0;
};

// Draws K paths from the fitted imputation law and reduces each to a design.
// A draw that leaves the grid (or enters NODATA) is replaced by a fresh draw.
inline ImputationSet impute_designs(const Track& track, const CtcrwParams& params, const CovariateModel& model,
                                    const ImputationConfig& cfg) {
  if (cfg.K == 0) throw DomainError("impute_designs: K must be >= 1");
  ImputationSet out;
  out.params = params;
  out.paths.resize(cfg.K);
  out.discrete.resize(cfg.K);
  out.designs.resize(cfg.K);
  std::vector<std::size_t> redraws(cfg.K, 0);
  parallel_for(cfg.K, cfg.threads, [&](std::size_t k) {
    const std::uint64_t base = derive_seed(cfg.seed, k);
    for (int attempt = 0;; ++attempt) {
      const std::uint64_t s = attempt == 0 ? base : derive_seed(base, static_cast<std::uint64_t>(attempt));
      ImputedPath path = draw_path(track, params, cfg.delta, s);
      try {
        DiscretePath dp = discretize(path, model.grid());
        DesignData d = build_design(dp, model, cfg.design);
        out.paths[k] = std::move(path);
        out.discrete[k] = std::move(dp);
        out.designs[k] = std::move(d);
        return;
      } catch (const DomainError& e) {
        if (attempt + 1 >= cfg.max_redraws)
          throw DomainError(detail::concat("imputation ", k, ": ", cfg.max_redraws, " draws failed; last: ", e.what()));
        ++redraws[k];
      }
    }
  });
  for (auto r : redraws) out.redraws += r;
  return out;
}

inline std::vector<GlmFit> fit_each(const std::vector<DesignData>& designs, std::size_t threads = 1) {
  std::vector<GlmFit> fits(designs.size());
  parallel_for(designs.size(), threads, [&](std::size_t k) { fits[k] = fit_irls(designs[k]); });
  return fits;
}

// Pooled estimate for K >= 2; a single fit is reported as-is (no between-imputation part).
inline PooledFit pool_or_single(const std::vector<GlmFit>& fits, bool use_correction = true) {
  if (fits.size() >= 2) return pool(fits, use_correction);
  if (fits.empty()) throw DomainError("no fits to pool");
  PooledFit p;
  p.names = fits[0].names;
  p.mean = fits[0].beta_hat;
  p.within = fits[0].covariance;
  p.between = Eigen::MatrixXd::Zero(p.within.rows(), p.within.cols());
  p.covariance = p.within;
  p.K = 1;
  p.correction = 1.0;
  return p;
}

}  // namespace ctds
