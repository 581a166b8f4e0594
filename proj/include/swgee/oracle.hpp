#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cstdint>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "swgee/correlation.hpp"
#include "swgee/errors.hpp"
#include "swgee/gee.hpp"
#include "swgee/rng.hpp"

namespace swgee {

struct OracleReport {
  int trials = 0;
  double max_score_gap = 0.0;
  double max_info_gap = 0.0;
  bool pass = false;
  std::string worst_case;  // how to regenerate the worst instance
};

namespace detail {

constexpr std::uint64_t kOracleStreamTag = 0x6F7261636C65ull;

inline CorrelationParams random_oracle_params(Structure structure,
                                              std::mt19937_64& g) {
  const double a0 = 0.05 + 0.35 * rng::uniform01(g);
  switch (structure) {
    case Structure::independence:
      return CorrelationParams::independence();
    case Structure::exchangeable:
      return CorrelationParams::exchangeable(a0);
    case Structure::nested_exchangeable:
      return CorrelationParams::nested_exchangeable(
          a0, 0.9 * a0 * rng::uniform01(g));
    case Structure::exponential_decay:
      return CorrelationParams::exponential_decay(
          a0, 0.1 + 0.9 * rng::uniform01(g));
  }
  throw Error(errc::invalid_spec, "unknown correlation structure");
}

}  // namespace detail

/// Randomized equivalence check between the cluster-period-mean quasi-score
/// and the individual-level quasi-score on small instances: for every
/// cluster the two score vectors and the two information matrices must
/// agree. `corrupt` deliberately breaks one covariance entry so tests can
/// confirm the check has teeth.
inline OracleReport score_compression_suite(int trials,
                                   std::optional<Structure> structure,
                                   std::uint64_t seed,
                                   bool corrupt = false) {
  if (trials < 1)
    throw Error(errc::invalid_spec, "need at least one oracle trial");
  OracleReport report;
  report.trials = trials;
  double worst_gap = -1.0;

  for (int t = 0; t < trials; ++t) {
    std::mt19937_64 g = rng::stream(
        seed, {detail::kOracleStreamTag, static_cast<std::uint64_t>(t)});
    const Structure tag =
        structure ? *structure
                  : (t % 2 == 0 ? Structure::nested_exchangeable
                                : Structure::exponential_decay);
    const CorrelationParams params = detail::random_oracle_params(tag, g);

    const int n_clusters = static_cast<int>(rng::uniform_int(g, 1, 4));
    const int n_periods = static_cast<int>(rng::uniform_int(g, 2, 3));
    Eigen::VectorXd beta(n_periods);
    for (int j = 0; j < n_periods; ++j)
      beta(j) = -1.0 + 2.0 * rng::uniform01(g);
    const double delta = -1.0 + 2.0 * rng::uniform01(g);

    double trial_gap = 0.0;
    for (int i = 0; i < n_clusters; ++i) {
      std::vector<int> periods;
      for (int j = 0; j < n_periods; ++j)
        if (rng::uniform01(g) >= 0.15) periods.push_back(j);
      if (periods.empty())
        periods.push_back(
            static_cast<int>(rng::uniform_int(g, 0, n_periods - 1)));
      const int m = static_cast<int>(periods.size());

      Eigen::VectorXi n(m);
      Eigen::VectorXd mu(m);
      Eigen::MatrixXd d1 = Eigen::MatrixXd::Zero(m, n_periods + 1);
      Eigen::VectorXd ybar(m);
      std::vector<double> y_individual;
      for (int a = 0; a < m; ++a) {
        const int j = periods[static_cast<std::size_t>(a)];
        n(a) = static_cast<int>(rng::uniform_int(g, 1, 5));
        const double x = rng::bernoulli(g, 0.5) ? 1.0 : 0.0;
        const double lp = beta(j) + delta * x;
        mu(a) = inverse_link(Link::logit, lp);
        const double deriv = mean_derivative(Link::logit, mu(a));
        d1(a, j) = deriv;
        d1(a, n_periods) = deriv * x;
        int total = 0;
        for (int u = 0; u < n(a); ++u) {
          const int v = rng::bernoulli(g, 0.5) ? 1 : 0;
          y_individual.push_back(static_cast<double>(v));
          total += v;
        }
        ybar(a) = static_cast<double>(total) / static_cast<double>(n(a));
      }

      ClusterCovariance cov = induced_covariance(mu, n, periods, params);
      if (corrupt) cov.v1(0, 0) *= 1.5;
      const Eigen::LLT<Eigen::MatrixXd> llt_cp(cov.v1);
      if (llt_cp.info() != Eigen::Success)
        throw Error(errc::infeasible_parameters,
                    "cluster-period covariance is not positive definite");
      const Eigen::VectorXd score_cp =
          d1.transpose() * llt_cp.solve(ybar - mu);
      const Eigen::MatrixXd info_cp = d1.transpose() * llt_cp.solve(d1);

      const IndividualExpansion ex =
          expand_individual(mu, n, periods, params, d1);
      const Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(
          y_individual.data(),
          static_cast<Eigen::Index>(y_individual.size()));
      const Eigen::LLT<Eigen::MatrixXd> llt_ind(ex.m1);
      if (llt_ind.info() != Eigen::Success)
        throw Error(errc::infeasible_parameters,
                    "individual covariance is not positive definite");
      const Eigen::VectorXd score_ind =
          ex.e1.transpose() * llt_ind.solve(y - ex.vartheta);
      const Eigen::MatrixXd info_ind =
          ex.e1.transpose() * llt_ind.solve(ex.e1);

      const double score_gap =
          (score_cp - score_ind).cwiseAbs().maxCoeff();
      const double info_gap = (info_cp - info_ind).cwiseAbs().maxCoeff();
      trial_gap = std::max({trial_gap, score_gap, info_gap});
      report.max_score_gap = std::max(report.max_score_gap, score_gap);
      report.max_info_gap = std::max(report.max_info_gap, info_gap);
    }

    if (trial_gap > worst_gap) {
      worst_gap = trial_gap;
      std::ostringstream os;
      os << "trial " << t << " (seed " << seed << "): I=" << n_clusters
         << " J=" << n_periods << " structure=" << structure_name(tag)
         << " gap=" << trial_gap;
      report.worst_case = os.str();
    }
  }

  report.pass =
      std::max(report.max_score_gap, report.max_info_gap) < 1e-8;
  return report;
}

}  // namespace swgee
