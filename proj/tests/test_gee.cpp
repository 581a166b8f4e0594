#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>
#include <vector>

#include <gtest/gtest.h>

#include "support/checks.hpp"
#include "support/oracles.hpp"
#include "swgee/gee.hpp"

using swgee::Adjustment;
using swgee::ClusterWork;
using swgee::CorrelationParams;
using swgee::errc;
using swgee::Link;
using swgee::ModelSpec;
using swgee::Structure;
using swgee::TrialData;

namespace {

TrialData cp_data(const std::string& text) {
  std::istringstream in(text);
  return swgee::ingest_cluster_period(in);
}

ModelSpec spec_of(Structure s, Adjustment a = Adjustment::maee) {
  ModelSpec spec;
  spec.structure = s;
  spec.adjustment = a;
  return spec;
}

TEST(MeanScore, VanishesAtExactMeans) {
  // theta = 0 puts every fitted mean at one half, matched by the data
  const TrialData d = cp_data(
      "cluster,period,treatment,n,y\n"
      "a,1,0,2,1\n"
      "a,2,1,4,2\n"
      "b,1,0,6,3\n"
      "b,2,1,2,1\n");
  const Eigen::VectorXd theta = Eigen::VectorXd::Zero(3);
  const auto ms = swgee::mean_score(d, Link::logit, theta,
                                    CorrelationParams::independence());
  EXPECT_LT(ms.u1.cwiseAbs().maxCoeff(), 1e-14);
}

TEST(MeanScore, HandComputedControlCluster) {
  // one untreated cluster, means at one half, second-period residual -1/4:
  // the score picks up -1 in the second period slot and nothing elsewhere
  const TrialData d = cp_data(
      "cluster,period,treatment,n,y\n"
      "a,1,0,4,2\n"
      "a,2,0,4,1\n");
  const Eigen::VectorXd theta = Eigen::VectorXd::Zero(3);
  const auto ms = swgee::mean_score(d, Link::logit, theta,
                                    CorrelationParams::independence());
  ASSERT_EQ(ms.u1.size(), 3);
  EXPECT_NEAR(ms.u1(0), 0.0, 1e-14);
  EXPECT_NEAR(ms.u1(1), -1.0, 1e-14);
  EXPECT_NEAR(ms.u1(2), 0.0, 1e-14);
}

TEST(MeanScore, ZeroIccNestedMatchesIndependence) {
  std::mt19937_64 g(11);
  const TrialData d = oracle::random_trial(g, 5, 3, 2, 8);
  Eigen::VectorXd theta(4);
  theta << -0.3, 0.1, 0.4, -0.2;
  const auto ind = swgee::mean_score(d, Link::logit, theta,
                                     CorrelationParams::independence());
  const auto ne = swgee::mean_score(
      d, Link::logit, theta, CorrelationParams::nested_exchangeable(0.0, 0.0));
  EXPECT_LT((ind.u1 - ne.u1).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((ind.info - ne.info).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(ResidualProducts, LeverageTracesSumToParameterCount) {
  std::mt19937_64 g(13);
  const TrialData d = oracle::random_trial(g, 8, 4, 2, 9);
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(5);
  theta(4) = 0.3;
  const auto works = swgee::residual_products(
      d, Link::logit, theta, CorrelationParams::nested_exchangeable(0.05, 0.02));
  double trace = 0.0;
  for (const auto& w : works) trace += w.h1.trace();
  EXPECT_NEAR(trace, 5.0, 1e-10);
}

TEST(ResidualProducts, RawProductsAreResidualOuterProducts) {
  // means at one half (theta = 0 wipes out the treatment column); residuals
  // 0.1 and -0.2 give products (0.01, -0.02, 0.04) in upper-triangle order
  const TrialData d = cp_data(
      "cluster,period,treatment,n,y\n"
      "a,1,0,10,6\n"
      "a,2,0,10,3\n"
      "b,1,0,10,5\n"
      "b,2,1,10,5\n"
      "c,1,0,10,5\n"
      "c,2,1,10,5\n"
      "d,1,0,10,5\n"
      "d,2,0,10,5\n");
  const Eigen::VectorXd theta = Eigen::VectorXd::Zero(3);
  const auto works = swgee::residual_products(
      d, Link::logit, theta, CorrelationParams::nested_exchangeable(0.0, 0.0));
  ASSERT_EQ(works.size(), 4u);
  ASSERT_EQ(works[0].s_raw.size(), 3);
  EXPECT_NEAR(works[0].s_raw(0), 0.01, 1e-14);
  EXPECT_NEAR(works[0].s_raw(1), -0.02, 1e-14);
  EXPECT_NEAR(works[0].s_raw(2), 0.04, 1e-14);
}

TEST(ResidualProducts, AdjustedProductsMatchDenseSymmetrization) {
  std::mt19937_64 g(29);
  const TrialData d = oracle::random_trial(g, 6, 3, 2, 7);
  Eigen::VectorXd theta(4);
  theta << 0.2, -0.1, 0.3, -0.4;
  const auto works = swgee::residual_products(
      d, Link::logit, theta, CorrelationParams::nested_exchangeable(0.08, 0.03));
  for (const auto& w : works) {
    const int m = static_cast<int>(w.mu.size());
    const Eigen::VectorXd r = w.residual();
    const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(m, m);
    const Eigen::VectorXd t = (id - w.h1).fullPivLu().solve(r);
    const Eigen::MatrixXd dense =
        0.5 * (t * r.transpose() + r * t.transpose());
    for (std::size_t row = 0; row < w.pairs.size(); ++row) {
      const auto [a, b] = w.pairs[row];
      EXPECT_NEAR(w.s_adj(row), dense(a, b), 1e-12);
      EXPECT_NEAR(w.s_raw(row), r(a) * r(b), 1e-14);
    }
  }
}

TEST(AlphaUpdates, NestedClosedFormWorkedExamples) {
  // cluster 1: a single period of two members, variance 1/4, product 0.2;
  // cluster 2: two singleton periods whose cross product is 0.01
  Eigen::VectorXi n1(1), n2(2);
  n1 << 2;
  n2 << 1, 1;
  Eigen::VectorXd mu1 = Eigen::VectorXd::Constant(1, 0.5);
  Eigen::VectorXd mu2 = Eigen::VectorXd::Constant(2, 0.5);
  Eigen::VectorXd s1 = Eigen::VectorXd::Constant(1, 0.2);
  Eigen::VectorXd s2(3);
  s2 << 0.7, 0.01, 0.9;  // singleton diagonals carry zero weight
  std::vector<ClusterWork> works;
  works.push_back(oracle::make_work({0}, n1, mu1, s1));
  works.push_back(oracle::make_work({0, 1}, n2, mu2, s2));

  const auto [a0, a1] = swgee::ne_update(works, Adjustment::uee);
  EXPECT_NEAR(a0, 0.6, 1e-14);
  EXPECT_NEAR(a1, 0.04, 1e-14);
}

TEST(AlphaUpdates, ZeroProductsGiveKnownNegatives) {
  Eigen::VectorXi n1(1), n2(2);
  n1 << 2;
  n2 << 1, 1;
  Eigen::VectorXd mu1 = Eigen::VectorXd::Constant(1, 0.5);
  Eigen::VectorXd mu2 = Eigen::VectorXd::Constant(2, 0.5);
  std::vector<ClusterWork> works;
  works.push_back(
      oracle::make_work({0}, n1, mu1, Eigen::VectorXd::Zero(1)));
  works.push_back(
      oracle::make_work({0, 1}, n2, mu2, Eigen::VectorXd::Zero(3)));
  const auto [a0, a1] = swgee::ne_update(works, Adjustment::uee);
  // numerator reduces to -sum frac nu^2/n over the n = 2 cell
  EXPECT_NEAR(a0, -1.0, 1e-14);
  EXPECT_NEAR(a1, 0.0, 1e-14);
}

TEST(AlphaUpdates, MissingIdentificationThrows) {
  // singletons only: no cell with n >= 2 anywhere
  Eigen::VectorXi n(2);
  n << 1, 1;
  Eigen::VectorXd mu = Eigen::VectorXd::Constant(2, 0.5);
  std::vector<ClusterWork> works;
  works.push_back(oracle::make_work({0, 1}, n, mu, Eigen::VectorXd::Zero(3)));
  EXPECT_TRUE(checks::throws_code(
      [&] { swgee::ne_update(works, Adjustment::uee); },
      errc::unidentified_parameter));
}

TEST(AlphaUpdates, ProjectionClampsToFeasibleBox) {
  ModelSpec spec = spec_of(Structure::nested_exchangeable);
  bool projected = false;
  const auto a = swgee::detail::project_alpha(
      CorrelationParams::nested_exchangeable(-1.0, 0.5), spec, 10, &projected);
  EXPECT_TRUE(projected);
  EXPECT_NEAR(a.alpha0, 1e-8, 1e-20);
  EXPECT_LE(a.alpha1, a.alpha0);
}

TEST(AlphaUpdates, DecaySolverSelfConsistentOnFixture) {
  Eigen::VectorXi n1(1), n2(2);
  n1 << 2;
  n2 << 1, 1;
  Eigen::VectorXd mu1 = Eigen::VectorXd::Constant(1, 0.5);
  Eigen::VectorXd mu2 = Eigen::VectorXd::Constant(2, 0.5);
  Eigen::VectorXd s2(3);
  s2 << 0.0, 0.01, 0.0;
  std::vector<ClusterWork> works;
  works.push_back(
      oracle::make_work({0}, n1, mu1, Eigen::VectorXd::Constant(1, 0.2)));
  works.push_back(oracle::make_work({0, 1}, n2, mu2, s2));

  const auto u = swgee::ed_update(works, Adjustment::uee, 0.01, 0.5);
  EXPECT_FALSE(u.boundary);
  // the pair must solve both stacked equations simultaneously
  EXPECT_NEAR(swgee::ed_alpha0_given_rho(works, Adjustment::uee, u.rho),
              u.alpha0, 1e-12);
  EXPECT_NEAR(swgee::ed_rho_equation(works, Adjustment::uee, u.alpha0, u.rho),
              0.0, 1e-12);
  // with a single between-period distance the decay root has a closed form
  EXPECT_NEAR(u.rho, 0.01 / (u.alpha0 * 0.25), 1e-10);
}

TEST(AlphaUpdates, ZeroCrossProductsPinDecayAtZero) {
  Eigen::VectorXi n1(1), n2(2);
  n1 << 2;
  n2 << 1, 1;
  Eigen::VectorXd mu1 = Eigen::VectorXd::Constant(1, 0.5);
  Eigen::VectorXd mu2 = Eigen::VectorXd::Constant(2, 0.5);
  std::vector<ClusterWork> works;
  works.push_back(
      oracle::make_work({0}, n1, mu1, Eigen::VectorXd::Constant(1, 0.2)));
  works.push_back(
      oracle::make_work({0, 1}, n2, mu2, Eigen::VectorXd::Zero(3)));
  const auto u = swgee::ed_update(works, Adjustment::uee, 0.01, 0.5);
  EXPECT_NEAR(u.rho, 0.0, 1e-12);
  // at decay zero the within-period ratio ignores the cross terms entirely
  EXPECT_NEAR(u.alpha0, 0.6, 1e-12);
}

TEST(Fit, IndependenceMatchesIrlsOracle) {
  std::mt19937_64 g(41);
  const TrialData d = oracle::random_trial(g, 10, 4, 5, 20);
  auto fit = swgee::fit(d, spec_of(Structure::independence, Adjustment::uee));
  ASSERT_TRUE(fit.converged);
  const Eigen::VectorXd glm = oracle::irls_logit(d);
  EXPECT_LT((fit.theta - glm).cwiseAbs().maxCoeff(), 1e-7);
}

TEST(Fit, AllControlDesignIsUnidentified) {
  const TrialData d = cp_data(
      "cluster,period,treatment,n,y\n"
      "a,1,0,5,2\n"
      "a,2,0,5,3\n"
      "b,1,0,5,1\n"
      "b,2,0,5,2\n");
  EXPECT_TRUE(checks::throws_code(
      [&] { swgee::fit(d, spec_of(Structure::independence)); },
      errc::unidentified_parameter));
}

TEST(Fit, ClusterOrderDoesNotMatter) {
  std::mt19937_64 g(43);
  TrialData d = oracle::random_trial(g, 7, 3, 3, 12);
  TrialData shuffled = d;
  std::vector<int> perm{4, 2, 6, 0, 5, 1, 3};
  for (int i = 0; i < 7; ++i) {
    shuffled.cluster_ids[i] = d.cluster_ids[perm[i]];
    shuffled.sizes.row(i) = d.sizes.row(perm[i]);
    shuffled.totals.row(i) = d.totals.row(perm[i]);
    shuffled.treatment.row(i) = d.treatment.row(perm[i]);
  }
  const auto f1 = swgee::fit(d, spec_of(Structure::nested_exchangeable));
  const auto f2 = swgee::fit(shuffled, spec_of(Structure::nested_exchangeable));
  ASSERT_TRUE(f1.converged);
  ASSERT_TRUE(f2.converged);
  EXPECT_LT((f1.theta - f2.theta).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((f1.alpha.vec() - f2.alpha.vec()).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Fit, CorrelationEquationsHoldAtNestedSolution) {
  std::mt19937_64 g(47);
  int interior = 0;
  for (int rep = 0; rep < 5; ++rep) {
    const TrialData d = oracle::random_trial(g, 9, 4, 4, 15);
    for (const auto adj : {Adjustment::uee, Adjustment::maee}) {
      const auto fit =
          swgee::fit(d, spec_of(Structure::nested_exchangeable, adj));
      ASSERT_TRUE(fit.converged);
      if (fit.alpha_projected) {
        // a clamped solution sits on the feasibility boundary, where the
        // unconstrained equation need not vanish; check the bookkeeping
        const double floor =
            -fit.alpha.alpha0 / (d.sizes.maxCoeff() - 1.0);
        EXPECT_GE(fit.alpha.alpha1, floor);
        EXPECT_LT(fit.alpha_raw(1), fit.alpha.alpha1);
        continue;
      }
      ++interior;
      const Eigen::VectorXd score = swgee::alpha_score(fit);
      EXPECT_LT(score.cwiseAbs().maxCoeff(), 1e-10)
          << "rep " << rep << " adjustment " << static_cast<int>(adj);
    }
  }
  EXPECT_GE(interior, 4);  // the seed gives mostly interior solutions
}

TEST(Fit, DecayEquationsHoldAtInteriorSolution) {
  std::mt19937_64 g(53);
  int interior_seen = 0;
  for (int rep = 0; rep < 8; ++rep) {
    const TrialData d = oracle::random_trial(g, 10, 4, 6, 18);
    const auto fit = swgee::fit(d, spec_of(Structure::exponential_decay));
    ASSERT_TRUE(fit.converged);
    EXPECT_NEAR(
        swgee::ed_alpha0_given_rho(fit.clusters, fit.spec.adjustment,
                                   fit.alpha.rho),
        fit.alpha.alpha0, 1e-10);
    if (!fit.rho_boundary && fit.alpha.rho > 0.0 && fit.alpha.rho < 1.0) {
      ++interior_seen;
      EXPECT_NEAR(swgee::ed_rho_equation(fit.clusters, fit.spec.adjustment,
                                         fit.alpha.alpha0, fit.alpha.rho),
                  0.0, 1e-8);
    }
  }
  EXPECT_GT(interior_seen, 0);
}

TEST(Fit, EqualIccConstraintReducesToExchangeable) {
  std::mt19937_64 g(59);
  const TrialData d = oracle::random_trial(g, 8, 3, 4, 14);
  ModelSpec constrained = spec_of(Structure::nested_exchangeable);
  constrained.constrain_equal_icc = true;
  const auto ne = swgee::fit(d, constrained);
  const auto ex = swgee::fit(d, spec_of(Structure::exchangeable));
  ASSERT_TRUE(ne.converged);
  ASSERT_TRUE(ex.converged);
  EXPECT_LT((ne.theta - ex.theta).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_NEAR(ne.alpha.alpha0, ex.alpha.alpha0, 1e-10);
  EXPECT_NEAR(ne.alpha.alpha1, ex.alpha.alpha0, 1e-10);
}

TEST(Fit, UnitDecayConstraintReducesToExchangeable) {
  std::mt19937_64 g(61);
  const TrialData d = oracle::random_trial(g, 8, 3, 4, 14);
  ModelSpec fixed = spec_of(Structure::exponential_decay);
  fixed.fixed_rho = 1.0;
  const auto ed = swgee::fit(d, fixed);
  const auto ex = swgee::fit(d, spec_of(Structure::exchangeable));
  ASSERT_TRUE(ed.converged);
  ASSERT_TRUE(ex.converged);
  EXPECT_LT((ed.theta - ex.theta).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_NEAR(ed.alpha.alpha0, ex.alpha.alpha0, 1e-10);
}

TEST(Fit, SinglePeriodDecayIsRejected) {
  const TrialData d = cp_data(
      "cluster,period,treatment,n,y\n"
      "a,1,0,5,2\n"
      "b,1,1,5,3\n");
  EXPECT_TRUE(checks::throws_code(
      [&] { swgee::fit(d, spec_of(Structure::exponential_decay)); },
      errc::unidentified_parameter));
}

TEST(Fit, HandlesUnobservedCells) {
  std::mt19937_64 g(67);
  TrialData d = oracle::random_trial(g, 9, 4, 4, 12);
  // knock out a few cells; the grid keeps zero-size placeholders
  d.sizes(0, 3) = 0;
  d.totals(0, 3) = 0;
  d.sizes(4, 0) = 0;
  d.totals(4, 0) = 0;
  const auto fit = swgee::fit(d, spec_of(Structure::nested_exchangeable));
  ASSERT_TRUE(fit.converged);
  EXPECT_LT(fit.score_norm, 1e-8);
  EXPECT_TRUE(std::isnan(fit.mu_hat(0, 3)));
  EXPECT_FALSE(std::isnan(fit.mu_hat(0, 0)));
}

TEST(Fit, RejectsBadControls) {
  std::mt19937_64 g(71);
  const TrialData d = oracle::random_trial(g, 4, 3, 3, 9);
  ModelSpec bad = spec_of(Structure::independence);
  bad.tolerance = -1.0;
  EXPECT_TRUE(checks::throws_code([&] { swgee::fit(d, bad); },
                                  errc::invalid_spec));
}

}  // namespace
