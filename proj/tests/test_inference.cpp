#include <cmath>
#include <map>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "support/checks.hpp"
#include "support/oracles.hpp"
#include "swgee/gee.hpp"
#include "swgee/inference.hpp"
#include "swgee/simulation.hpp"

using swgee::Adjustment;
using swgee::Correction;
using swgee::CorrelationParams;
using swgee::errc;
using swgee::FitResult;
using swgee::ModelSpec;
using swgee::Structure;
using swgee::TrialData;

namespace {

FitResult fit_random(std::mt19937_64& g, Structure s, int I = 9, int J = 4,
                     Adjustment adj = Adjustment::maee) {
  const TrialData d = oracle::random_trial(g, I, J, 4, 15);
  ModelSpec spec;
  spec.structure = s;
  spec.adjustment = adj;
  FitResult f = swgee::fit(d, spec);
  EXPECT_TRUE(f.converged);
  return f;
}

TEST(Sandwich, ClusterRelabelingLeavesEveryCorrectionAlone) {
  std::mt19937_64 g(101);
  const TrialData d = oracle::random_trial(g, 8, 3, 3, 12);
  TrialData relabeled = d;
  const std::vector<int> perm{5, 0, 7, 2, 6, 1, 4, 3};
  for (int i = 0; i < 8; ++i) {
    relabeled.cluster_ids[i] = d.cluster_ids[perm[i]];
    relabeled.sizes.row(i) = d.sizes.row(perm[i]);
    relabeled.totals.row(i) = d.totals.row(perm[i]);
    relabeled.treatment.row(i) = d.treatment.row(perm[i]);
  }
  ModelSpec spec;
  spec.structure = Structure::nested_exchangeable;
  const FitResult f1 = swgee::fit(d, spec);
  const FitResult f2 = swgee::fit(relabeled, spec);
  for (Correction c : swgee::all_corrections()) {
    const Eigen::MatrixXd c1 = swgee::sandwich(f1, c);
    const Eigen::MatrixXd c2 = swgee::sandwich(f2, c);
    EXPECT_LT((c1 - c2).cwiseAbs().maxCoeff(), 1e-10)
        << swgee::correction_name(c);
  }
}

TEST(Sandwich, LeverageFreeFitCollapsesCorrectionsToUncorrected) {
  std::mt19937_64 g(103);
  FitResult f = fit_random(g, Structure::nested_exchangeable);
  for (auto& w : f.clusters) {
    w.h1.setZero();
    w.h2.setZero();
  }
  const Eigen::MatrixXd bc0 = swgee::sandwich(f, Correction::bc0);
  const Eigen::MatrixXd bc1 = swgee::sandwich(f, Correction::bc1);
  const Eigen::MatrixXd bc2 = swgee::sandwich(f, Correction::bc2);
  EXPECT_LT((bc1 - bc0).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_LT((bc2 - bc0).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Sandwich, UncorrectedMeanBlockMatchesTextbookOracle) {
  std::mt19937_64 g(107);
  for (int rep = 0; rep < 4; ++rep) {
    const TrialData d = oracle::random_trial(g, 10, 4, 4, 16);
    ModelSpec spec;
    spec.structure = Structure::nested_exchangeable;
    spec.adjustment = Adjustment::uee;
    const FitResult f = swgee::fit(d, spec);
    ASSERT_TRUE(f.converged);
    const int p = f.n_mean_parameters();
    const Eigen::MatrixXd mine =
        swgee::sandwich(f, Correction::bc0).topLeftCorner(p, p);
    const Eigen::MatrixXd oracle_cov =
        oracle::textbook_bc0(d, f.theta, f.alpha);
    const double scale = oracle_cov.cwiseAbs().maxCoeff();
    EXPECT_LT((mine - oracle_cov).cwiseAbs().maxCoeff(), 1e-9 * scale)
        << "rep " << rep;
  }
}

TEST(Sandwich, VariancesAreNonnegativeAndOrderedOnFixtures) {
  std::mt19937_64 g(109);
  for (int rep = 0; rep < 3; ++rep) {
    const FitResult f = fit_random(g, Structure::nested_exchangeable, 8, 3);
    const int p = f.n_mean_parameters();
    std::map<Correction, Eigen::MatrixXd> cov;
    for (Correction c : swgee::all_corrections()) {
      cov[c] = swgee::sandwich(f, c);
      EXPECT_GE(cov[c].diagonal().minCoeff(), 0.0)
          << swgee::correction_name(c);
    }
    // small-sample corrections widen the treatment-effect variance
    const int dd = p - 1;
    EXPECT_LE(cov[Correction::bc0](dd, dd),
              cov[Correction::bc1](dd, dd) * (1.0 + 1e-12));
    EXPECT_LE(cov[Correction::bc1](dd, dd),
              cov[Correction::bc2](dd, dd) * (1.0 + 1e-12));
    EXPECT_GE(cov[Correction::bc3](dd, dd),
              cov[Correction::bc0](dd, dd) * (1.0 - 1e-12));
  }
}

TEST(Sandwich, ModelBasedMatchesInverseInformation) {
  std::mt19937_64 g(113);
  const TrialData d = oracle::random_trial(g, 10, 3, 5, 18);
  ModelSpec spec;
  spec.structure = Structure::independence;
  spec.adjustment = Adjustment::uee;
  const FitResult f = swgee::fit(d, spec);
  // under working independence the information is the binomial-weighted
  // cross-product matrix, assembled here from the raw table
  const int J = d.n_periods();
  const int p = J + 1;
  Eigen::MatrixXd xtwx = Eigen::MatrixXd::Zero(p, p);
  for (int i = 0; i < d.n_clusters(); ++i)
    for (int j = 0; j < J; ++j) {
      if (d.sizes(i, j) == 0) continue;
      const double eta = f.theta(j) + f.theta(p - 1) * d.treatment(i, j);
      const double mu = 1.0 / (1.0 + std::exp(-eta));
      Eigen::VectorXd x = Eigen::VectorXd::Zero(p);
      x(j) = 1.0;
      x(p - 1) = d.treatment(i, j);
      xtwx += d.sizes(i, j) * mu * (1.0 - mu) * x * x.transpose();
    }
  const Eigen::MatrixXd want = xtwx.inverse();
  const Eigen::MatrixXd got = swgee::model_based(f);
  EXPECT_LT((got - want).cwiseAbs().maxCoeff(),
            1e-9 * want.cwiseAbs().maxCoeff());
}

TEST(Sandwich, SetCollectsRequestedCorrections) {
  std::mt19937_64 g(127);
  const FitResult f = fit_random(g, Structure::exchangeable, 7, 3);
  const auto set = swgee::make_sandwich_set(
      f, {Correction::bc0, Correction::bc2});
  EXPECT_EQ(set.joint.size(), 2u);
  EXPECT_TRUE(set.joint.count(Correction::bc0));
  EXPECT_TRUE(set.joint.count(Correction::bc2));
  EXPECT_EQ(set.model_based.rows(), f.n_mean_parameters());
}

TEST(Intervals, NamesFollowPeriodLabelsAndStructure) {
  std::mt19937_64 g(131);
  const FitResult ne = fit_random(g, Structure::nested_exchangeable, 8, 3);
  const auto names = swgee::parameter_names(ne, true);
  ASSERT_EQ(names.size(), 6u);
  EXPECT_EQ(names[0], "beta[1]");
  EXPECT_EQ(names[2], "beta[3]");
  EXPECT_EQ(names[3], "delta");
  EXPECT_EQ(names[4], "alpha0");
  EXPECT_EQ(names[5], "alpha1");
  const FitResult ed = fit_random(g, Structure::exponential_decay, 8, 3);
  EXPECT_EQ(swgee::parameter_names(ed, true).back(), "rho");
}

TEST(Intervals, UseTQuantileWithClustersMinusTwoDof) {
  std::mt19937_64 g(137);
  // twelve clusters: ten degrees of freedom
  const FitResult f = fit_random(g, Structure::nested_exchangeable, 12, 3);
  const Eigen::MatrixXd cov = swgee::sandwich(f, Correction::bc1);
  const auto rep95 = swgee::intervals(f, cov, 0.95);
  EXPECT_EQ(rep95.dof, 10);
  EXPECT_NEAR(rep95.t_quantile, oracle::kT975Dof10, 1e-9);
  const auto rep99 = swgee::intervals(f, cov, 0.99);
  EXPECT_NEAR(rep99.t_quantile, oracle::kT995Dof10, 1e-9);

  const int dd = f.n_mean_parameters() - 1;
  const double se = std::sqrt(cov(dd, dd));
  EXPECT_NEAR(rep95.rows[dd].lower, f.theta(dd) - rep95.t_quantile * se,
              1e-12);
  EXPECT_NEAR(rep95.rows[dd].upper, f.theta(dd) + rep95.t_quantile * se,
              1e-12);

  // six clusters: four degrees of freedom
  const FitResult f6 = fit_random(g, Structure::exchangeable, 6, 3);
  const auto rep6 =
      swgee::intervals(f6, swgee::sandwich(f6, Correction::bc2), 0.95);
  EXPECT_EQ(rep6.dof, 4);
  EXPECT_NEAR(rep6.t_quantile, oracle::kT975Dof4, 1e-9);
}

TEST(Intervals, NarrowerConfidenceNestsInsideWider) {
  std::mt19937_64 g(139);
  const FitResult f = fit_random(g, Structure::nested_exchangeable, 10, 4);
  const Eigen::MatrixXd cov = swgee::sandwich(f, Correction::bc1);
  const auto wide = swgee::intervals(f, cov, 0.95);
  const auto tight = swgee::intervals(f, cov, 0.5);
  for (std::size_t k = 0; k < wide.rows.size(); ++k) {
    EXPECT_GT(tight.rows[k].lower, wide.rows[k].lower);
    EXPECT_LT(tight.rows[k].upper, wide.rows[k].upper);
  }
}

TEST(Intervals, JointCovarianceCoversCorrelationParameters) {
  std::mt19937_64 g(149);
  const FitResult f = fit_random(g, Structure::nested_exchangeable, 9, 3);
  const auto rep = swgee::intervals(f, swgee::sandwich(f, Correction::bc2));
  ASSERT_EQ(rep.rows.size(), 6u);
  EXPECT_EQ(rep.rows[4].name, "alpha0");
  EXPECT_NEAR(rep.rows[4].estimate, f.alpha.alpha0, 1e-15);
}

TEST(Intervals, TooFewClustersIsAnError) {
  // two clusters leave zero t degrees of freedom, however the fit was made
  std::mt19937_64 g(151);
  const TrialData d = oracle::random_trial(g, 6, 3, 8, 16);
  ModelSpec spec;
  spec.structure = Structure::independence;
  const FitResult full = swgee::fit(d, spec);
  const Eigen::MatrixXd cov = swgee::model_based(full);
  FitResult two = full;
  two.clusters.resize(2);
  EXPECT_TRUE(checks::throws_code([&] { swgee::intervals(two, cov); },
                                  errc::degrees_of_freedom));
}

TEST(Intervals, WrongCovarianceSizeIsAnError) {
  std::mt19937_64 g(157);
  const FitResult f = fit_random(g, Structure::exchangeable, 7, 3);
  EXPECT_TRUE(checks::throws_code(
      [&] { swgee::intervals(f, Eigen::MatrixXd::Identity(2, 2)); },
      errc::input));
}

TEST(Cic, MatchesItsDefiningTrace) {
  std::mt19937_64 g(163);
  const FitResult f = fit_random(g, Structure::nested_exchangeable, 10, 4);
  const int p = f.n_mean_parameters();

  Eigen::MatrixXd ind_info = Eigen::MatrixXd::Zero(p, p);
  for (const auto& w : f.clusters) {
    const Eigen::VectorXd nu = w.nu();
    for (int a = 0; a < w.mu.size(); ++a)
      ind_info += (w.n(a) / nu(a)) * w.d1.row(a).transpose() * w.d1.row(a);
  }
  const Eigen::MatrixXd omega =
      swgee::model_based(f);
  // leverage-corrected meat, mean block only
  const Eigen::MatrixXd joint = swgee::sandwich(f, Correction::bc1);
  const Eigen::MatrixXd lambda11 =
      omega.inverse() * joint.topLeftCorner(p, p) * omega.inverse();
  const double want = (ind_info * omega * lambda11 * omega).trace();
  EXPECT_NEAR(swgee::cic_cp(f), want, 1e-8 * std::max(1.0, std::abs(want)));
}

TEST(Cic, PrefersTheTrueStructureOnAverage) {
  // the criterion is used by picking the smallest value across working
  // structures; under strong nested correlation the correct structure
  // should beat working independence on average
  swgee::SimConfig config;
  config.clusters = 12;
  config.periods = 5;
  config.truth = CorrelationParams::nested_exchangeable(0.15, 0.1);
  config.size_low = 10;
  config.size_high = 20;
  config.seed = 20260818;
  ModelSpec right;
  right.structure = Structure::nested_exchangeable;
  ModelSpec wrong;
  wrong.structure = Structure::independence;

  double sum_right = 0.0, sum_wrong = 0.0;
  int used = 0;
  for (int rep = 0; rep < 500; ++rep) {
    const TrialData d = swgee::simulate_trial(config, rep);
    try {
      const FitResult fr = swgee::fit(d, right);
      const FitResult fw = swgee::fit(d, wrong);
      if (!fr.converged || !fw.converged) continue;
      const double cr = swgee::cic_cp(fr);
      const double cw = swgee::cic_cp(fw);
      EXPECT_TRUE(std::isfinite(cr) && cr > 0.0);
      EXPECT_TRUE(std::isfinite(cw) && cw > 0.0);
      sum_right += cr;
      sum_wrong += cw;
      ++used;
    } catch (const swgee::Error&) {
      continue;  // rare degenerate draws are fine to skip here
    }
  }
  ASSERT_GT(used, 400);
  const double p = config.periods + 1.0;
  EXPECT_LT(sum_right / used, sum_wrong / used);
  // small-sample inflation is expected, runaway values are not
  EXPECT_LT(sum_right / used, 4.0 * p);
}

}  // namespace
