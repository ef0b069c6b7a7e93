#include <gtest/gtest.h>

#include "support.hpp"

using namespace ctds;
using namespace ctds::testing;

namespace {

// Cox-de Boor recursion on the extended integer knot vector, summed over the
// periodic copies; a reference for the cyclic basis.
double cox_de_boor(int i, int d, double x) {
  if (d == 0) return (x >= i && x < i + 1) ? 1.0 : 0.0;
  return (x - i) / d * cox_de_boor(i, d - 1, x) + (i + d + 1 - x) / d * cox_de_boor(i + 1, d - 1, x);
}

double cyclic_reference(int k, int n, int d, double x) {
  double s = 0.0;
  for (int shift = -2; shift <= 2; ++shift) s += cox_de_boor(k + shift * n, d, x);
  return s;
}

}  // namespace

TEST(Spline, MatchesCoxDeBoorReference) {
  for (int degree : {1, 2, 3}) {
    SplineConfig cfg;
    cfg.degree = degree;
    cfg.knot_spacing = 4 * 3600.0;
    const int n = cfg.n_spl();
    for (double t = 0.0; t < cfg.period; t += 977.0) {
      const auto phi = spline_basis(cfg, t);
      const double x = t / cfg.knot_spacing;
      for (int k = 0; k < n; ++k) EXPECT_NEAR(phi[k], cyclic_reference(k, n, degree, x), 1e-12) << t;
    }
  }
}

TEST(Spline, PartitionOfUnityPeriodicityAndBounds) {
  SplineConfig cfg;
  Rng rng(2);
  for (int i = 0; i < 2000; ++i) {
    const double t = unif(rng, -5 * cfg.period, 5 * cfg.period);
    const auto phi = spline_basis(cfg, t);
    EXPECT_NEAR(phi.sum(), 1.0, 1e-10);
    EXPECT_GE(phi.minCoeff(), 0.0);
    const auto shifted = spline_basis(cfg, t + cfg.period);
    EXPECT_NEAR((phi - shifted).lpNorm<Eigen::Infinity>(), 0.0, 1e-9);
  }
  const auto a = spline_basis(cfg, 0.0), b = spline_basis(cfg, cfg.period);
  EXPECT_EQ(a, b);
  SplineConfig bad;
  bad.knot_spacing = 25000.0;
  EXPECT_THROW(bad.validate(), DomainError);
}

TEST(Design, BlocksRowsAndOffsets) {
  auto g = std::make_shared<RasterGrid>(3, 3, 1.0);
  g->add_layer("loc", std::vector<double>{0, 1, 2, 3, 4, 5, 6, 7, 8});
  DiscretePath dp;
  dp.cells = {g->cell(1, 1), g->cell(1, 2), g->cell(2, 2)};
  dp.clock_times = {0.0, 2.0, 2.5};
  dp.residence_times = {2.0, 0.5, 1.0};
  dp.end_time = 3.5;
  const auto d = build_design(dp, CovariateModel(g, {CovariateSpec::intercept(), CovariateSpec::location("loc", "loc"),
                                                     CovariateSpec::directional_persistence()}));
  // Interior cell: 4 rows; east edge cell (1,2): 3 rows.
  ASSERT_EQ(d.n_blocks(), 2u);
  EXPECT_EQ(d.n_rows(), 7);
  EXPECT_EQ(d.block_start, (std::vector<std::size_t>{0, 4, 7}));
  EXPECT_EQ(d.z.segment(0, 4), Eigen::Vector4d(1, 0, 0, 0));  // east move
  EXPECT_EQ(d.z.segment(4, 3), Eigen::Vector3d(1, 0, 0));     // north move from (1,2): E missing, N first
  EXPECT_NEAR(d.offset[0], std::log(2.0), 1e-15);
  EXPECT_NEAR(d.offset[5], std::log(0.5), 1e-15);
  EXPECT_EQ(d.X(0, 1), 4.0);
  EXPECT_EQ(d.X(4, 1), 5.0);
  // Persistence: zero in the first block, previous move (east) dotted with w afterwards.
  EXPECT_EQ(d.X.col(2).head(4).cwiseAbs().sum(), 0.0);
  EXPECT_EQ(d.X(4, 2), 0.0);   // north
  EXPECT_EQ(d.X(5, 2), -1.0);  // west
  EXPECT_EQ(d.X(6, 2), 0.0);   // south
  EXPECT_EQ(d.row_dir[4], RookDir::North);
  EXPECT_EQ(d.penalized, (std::vector<bool>{false, true, true}));
}

TEST(Design, CensoredTailBlockIsOptional) {
  Rng rng(1);
  auto g = random_grid(rng, 4, 4);
  const auto dp = random_discrete_path(rng, *g, 5);
  const CovariateModel m(g, basic_specs());
  const auto d0 = build_design(dp, m);
  DesignOptions o;
  o.use_censored_tail = true;
  const auto d1 = build_design(dp, m, o);
  EXPECT_EQ(d1.n_blocks(), d0.n_blocks() + 1);
  EXPECT_EQ(d1.z.sum(), d0.z.sum());
}

TEST(Design, TimeVaryingColumnsUseBasisAtEntry) {
  auto g = std::make_shared<RasterGrid>(3, 3, 1.0);
  SplineConfig sc;
  DiscretePath dp;
  dp.cells = {g->cell(1, 1), g->cell(1, 2)};
  dp.clock_times = {5000.0, 9000.0};
  dp.residence_times = {4000.0, 1.0};
  dp.end_time = 9001.0;
  const CovariateModel m(g, {CovariateSpec::intercept("b0", true)}, sc);
  EXPECT_EQ(m.column_names(), (std::vector<std::string>{"b0[0]", "b0[1]", "b0[2]", "b0[3]"}));
  const auto d = build_design(dp, m);
  const auto phi = spline_basis(sc, 5000.0);
  for (Eigen::Index r = 0; r < d.n_rows(); ++r) EXPECT_NEAR((d.X.row(r).transpose() - phi).norm(), 0.0, 1e-15);
}

TEST(Design, ConspecificDirectionFollowsCompanion) {
  auto g = std::make_shared<RasterGrid>(5, 5, 10.0);
  auto comp = std::make_shared<ImputedPath>();
  comp->times = {0.0, 100.0};
  comp->positions = {{45.0, 25.0}, {45.0, 25.0}};
  DiscretePath dp;
  dp.cells = {g->cell(2, 2), g->cell(2, 3)};
  dp.clock_times = {0.0, 10.0};
  dp.residence_times = {10.0, 5.0};
  dp.end_time = 15.0;
  const auto d = build_design(dp, CovariateModel(g, {CovariateSpec::directional_conspecific("c", comp)}));
  EXPECT_DOUBLE_EQ(d.X(0, 0), 1.0);   // east points at the companion
  EXPECT_DOUBLE_EQ(d.X(2, 0), -1.0);  // west
  EXPECT_DOUBLE_EQ(d.X(1, 0), 0.0);
}

TEST(Design, RejectsBadInputs) {
  auto g = std::make_shared<RasterGrid>(3, 3, 1.0);
  EXPECT_THROW(CovariateModel(g, {CovariateSpec::location("x", "missing")}), DomainError);
  EXPECT_THROW(CovariateModel(g, {CovariateSpec::intercept("a"), CovariateSpec::intercept("a")}), DomainError);
  DiscretePath dp;
  dp.cells = {g->cell(0, 0), g->cell(2, 2)};
  dp.clock_times = {0, 1};
  dp.residence_times = {1, 1};
  dp.end_time = 2;
  EXPECT_THROW(build_design(dp, CovariateModel(g, {CovariateSpec::intercept()})), DomainError);
}

TEST(Design, LatentPoissonEqualsDirectLikelihoodUpToConstant) {
  Rng rng(9);
  for (int rep = 0; rep < 25; ++rep) {
    auto g = random_grid(rng, 5, 6);
    const auto dp = random_discrete_path(rng, *g, 1 + pick(rng, 10));
    const CovariateModel m(g, basic_specs());
    const auto d = build_design(dp, m);
    double log_tau = 0.0;
    for (std::size_t i = 0; i + 1 < dp.n_visits(); ++i) log_tau += std::log(dp.residence_times[i]);
    for (int k = 0; k < 4; ++k) {
      Eigen::VectorXd b(5);
      for (int j = 0; j < 5; ++j) b[j] = unif(rng, -1, 1);
      Eigen::VectorXd g_direct;
      const double direct = path_loglik(dp, m, b, &g_direct);
      const auto pois = poisson_loglik(d, b);
      EXPECT_NEAR(pois.value - direct, log_tau, 1e-9 * (1 + std::abs(direct)));
      EXPECT_LT((pois.gradient - g_direct).lpNorm<Eigen::Infinity>(), 1e-10);
      EXPECT_NEAR(pois.value, naive_poisson_loglik(d, b), 1e-10 * (1 + std::abs(direct)));
    }
  }
}
