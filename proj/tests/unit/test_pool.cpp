#include <gtest/gtest.h>

#include "support.hpp"

using namespace ctds;
using namespace ctds::testing;

namespace {

GlmFit scalar_fit(double b, double v) {
  GlmFit f;
  f.names = {"b"};
  f.beta_hat = Eigen::VectorXd::Constant(1, b);
  f.covariance = Eigen::MatrixXd::Constant(1, 1, v);
  return f;
}

DesignData intercept_design(const std::vector<int>& dest_index) {
  // One block per entry, four neighbours each, residence 1.
  DesignData d;
  const auto n = static_cast<Eigen::Index>(4 * dest_index.size());
  d.X = Eigen::MatrixXd::Ones(n, 1);
  d.z = Eigen::VectorXd::Zero(n);
  d.offset = Eigen::VectorXd::Zero(n);
  d.weight = Eigen::VectorXd::Ones(n);
  d.block_start = {0};
  for (std::size_t b = 0; b < dest_index.size(); ++b) {
    if (dest_index[b] >= 0) d.z[static_cast<Eigen::Index>(4 * b) + dest_index[b]] = 1.0;
    for (int k = 0; k < 4; ++k) {
      d.row_block.push_back(b);
      d.row_dir.push_back(static_cast<RookDir>(k));
    }
    d.block_start.push_back(4 * (b + 1));
    d.block_time.push_back(static_cast<double>(b));
    d.block_source.push_back(0);
  }
  d.column_names = {"intercept"};
  d.column_groups = {"intercept"};
  d.penalized = {false};
  return d;
}

}  // namespace

TEST(Pool, HandArithmetic) {
  const auto p = pool({scalar_fit(0, 1), scalar_fit(2, 1)});
  EXPECT_DOUBLE_EQ(p.mean[0], 1.0);
  EXPECT_DOUBLE_EQ(p.within(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(p.between(0, 0), 2.0);
  EXPECT_DOUBLE_EQ(p.covariance(0, 0), 4.0);
  EXPECT_DOUBLE_EQ(p.correction, 1.5);
  const auto q = pool({scalar_fit(0, 1), scalar_fit(2, 1)}, false);
  EXPECT_DOUBLE_EQ(q.covariance(0, 0), 3.0);
}

TEST(Pool, IdenticalFitsAndPermutation) {
  const auto same = pool({scalar_fit(0.3, 0.2), scalar_fit(0.3, 0.2), scalar_fit(0.3, 0.2)});
  EXPECT_EQ(same.between(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(same.covariance(0, 0), 0.2);
  const auto a = pool({scalar_fit(1, 1), scalar_fit(2, 3), scalar_fit(-4, 2)});
  const auto b = pool({scalar_fit(-4, 2), scalar_fit(1, 1), scalar_fit(2, 3)});
  EXPECT_NEAR(a.mean[0], b.mean[0], 1e-15);
  EXPECT_NEAR(a.covariance(0, 0), b.covariance(0, 0), 1e-14);
}

TEST(Pool, CovarianceDominatesWithinOnRandomFits) {
  Rng rng(41);
  for (int rep = 0; rep < 20; ++rep) {
    const std::size_t K = 2 + pick(rng, 8);
    std::vector<GlmFit> fits(K);
    for (auto& f : fits) {
      f.names = {"a", "b", "c"};
      f.beta_hat = Eigen::Vector3d(unif(rng, -1, 1), unif(rng, -1, 1), unif(rng, -1, 1));
      Eigen::Matrix3d A = Eigen::Matrix3d::Random();
      f.covariance = A * A.transpose() + 0.1 * Eigen::Matrix3d::Identity();
    }
    const auto p = pool(fits);
    const Eigen::Matrix3d diff = p.covariance - p.within;
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(diff);
    EXPECT_GE(es.eigenvalues().minCoeff(), -1e-12);
    for (Eigen::Index j = 0; j < 3; ++j) {
      EXPECT_NEAR(p.upper()[j] - p.mean[j], kZ975 * std::sqrt(p.covariance(j, j)), 1e-12);
      EXPECT_EQ(p.starred(j), p.lower()[j] > 0 || p.upper()[j] < 0);
    }
  }
}

TEST(Pool, MismatchedColumnsListDifference) {
  GlmFit a = scalar_fit(0, 1), b = scalar_fit(0, 1);
  b.names = {"other"};
  try {
    pool({a, b});
    FAIL();
  } catch (const DomainError& e) {
    const std::string m = e.what();
    EXPECT_NE(m.find("b"), std::string::npos);
    EXPECT_NE(m.find("other"), std::string::npos);
  }
  EXPECT_THROW(pool({a}), DomainError);
}

TEST(Stack, SingleDesignIsIdentity) {
  Rng rng(42);
  const auto d = random_design(rng, 12);
  const auto s = stack_designs({d});
  EXPECT_EQ(s.X, d.X);
  EXPECT_EQ(s.weight, d.weight);
  EXPECT_EQ(s.block_start, d.block_start);
}

TEST(Stack, ReplicatedDesignsGiveSameLasso) {
  Rng rng(43);
  DesignData d;
  for (;;) {
    d = random_design(rng, 40);
    try {
      fit_irls(d);
      break;
    } catch (const Error&) {
    }
  }
  const auto s = stack_designs({d, d, d});
  EXPECT_EQ(s.n_blocks(), 3 * d.n_blocks());
  EXPECT_EQ(s.block_source.back(), 2u);
  EXPECT_NEAR(s.weight.sum(), d.weight.sum(), 1e-9);
  for (double f : {0.0, 0.1, 0.5}) {
    const double gamma = f * lasso_gamma_max(d);
    EXPECT_LT((fit_lasso(s, gamma).beta_hat - fit_lasso(d, gamma).beta_hat).lpNorm<Eigen::Infinity>(), 1e-6);
  }
}

TEST(Stack, InterceptMleLiesBetween) {
  // Same blocks; one design has an extra censored-style block without an event.
  const auto a = intercept_design({0, 1, 2, 3});
  const auto b = intercept_design({0, 1, 2, -1});
  const double ma = fit_irls(a).beta_hat[0], mb = fit_irls(b).beta_hat[0];
  const double ms = fit_irls(stack_designs({a, b})).beta_hat[0];
  EXPECT_NEAR(ma, std::log(4.0 / 16.0), 1e-10);
  EXPECT_NEAR(mb, std::log(3.0 / 16.0), 1e-10);
  EXPECT_GT(ms, std::min(ma, mb));
  EXPECT_LT(ms, std::max(ma, mb));
  auto c = a;
  c.column_names = {"x"};
  EXPECT_THROW(stack_designs({a, c}), DomainError);
}
