#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <vector>

#include "swgee/correlation.hpp"
#include "swgee/errors.hpp"
#include "swgee/gee.hpp"
#include "swgee/numeric.hpp"
#include "swgee/parallel.hpp"
#include "swgee/rng.hpp"

namespace swgee {

/// Cluster-period size distribution for design replicates: either
/// DiscreteUniform(low, high) or resampling an empirical list with
/// replacement.
struct SizeSampler {
  enum class Kind { discrete_uniform, empirical };

  Kind kind = Kind::discrete_uniform;
  int low = 1;
  int high = 1;
  std::vector<int> pool;

  static SizeSampler discrete_uniform(int low, int high) {
    if (low < 1 || high < low)
      throw Error(errc::invalid_spec,
                  "size bounds must satisfy 1 <= low <= high");
    SizeSampler s;
    s.kind = Kind::discrete_uniform;
    s.low = low;
    s.high = high;
    return s;
  }

  static SizeSampler empirical(std::vector<int> values) {
    if (values.empty())
      throw Error(errc::invalid_spec, "empirical size list is empty");
    for (int v : values)
      if (v < 1)
        throw Error(errc::invalid_spec, "empirical sizes must be >= 1");
    SizeSampler s;
    s.kind = Kind::empirical;
    s.pool = std::move(values);
    return s;
  }

  int draw(std::mt19937_64& g) const {
    if (kind == Kind::discrete_uniform)
      return static_cast<int>(rng::uniform_int(g, low, high));
    const auto idx = rng::uniform_int(
        g, 0, static_cast<std::int64_t>(pool.size()) - 1);
    return pool[static_cast<std::size_t>(idx)];
  }
};

/// Period effects interpolated linearly on the link scale between a starting
/// and an ending prevalence.
inline Eigen::VectorXd default_period_trend(int n_periods,
                                            double start_prevalence = 0.25,
                                            double end_prevalence = 0.20,
                                            Link link = Link::logit) {
  if (n_periods < 1)
    throw Error(errc::invalid_spec, "need at least one period");
  Eigen::VectorXd beta(n_periods);
  const double a = link_of_mean(link, start_prevalence);
  const double b = link_of_mean(link, end_prevalence);
  for (int j = 0; j < n_periods; ++j) {
    const double w =
        n_periods == 1 ? 0.0
                       : static_cast<double>(j) /
                             static_cast<double>(n_periods - 1);
    beta(j) = a + w * (b - a);
  }
  return beta;
}

/// Standard stepped-wedge treatment grid: everyone control in period 1,
/// J - 1 crossover waves as equal as the cluster count allows (earlier waves
/// take the remainder), everyone treated in period J.
inline Eigen::MatrixXi staircase_design(int n_clusters, int n_periods) {
  if (n_periods < 2)
    throw Error(errc::invalid_spec, "a staircase needs at least 2 periods");
  const int waves = n_periods - 1;
  if (n_clusters < waves)
    throw Error(errc::invalid_spec,
                "fewer clusters than crossover waves");
  const int base = n_clusters / waves;
  const int rem = n_clusters % waves;
  Eigen::MatrixXi design = Eigen::MatrixXi::Zero(n_clusters, n_periods);
  int row = 0;
  for (int w = 0; w < waves; ++w) {
    const int count = base + (w < rem ? 1 : 0);
    for (int c = 0; c < count; ++c, ++row)
      for (int j = w + 1; j < n_periods; ++j) design(row, j) = 1;
  }
  return design;
}

struct AreConfig {
  Eigen::MatrixXi design;  // I x J treatment indicators
  Link link = Link::logit;
  Eigen::VectorXd beta;    // period effects on the link scale
  double delta = std::log(0.75);
  CorrelationParams truth;
  SizeSampler sizes;
  int replicates = 1000;
  std::uint64_t seed = 0;
  int threads = 1;
};

namespace detail {

inline void check_are_inputs(const Eigen::MatrixXi& design,
                             const Eigen::VectorXd& beta) {
  if (design.rows() < 1 || design.cols() < 1)
    throw Error(errc::invalid_spec, "design matrix is empty");
  if (beta.size() != design.cols())
    throw Error(errc::invalid_spec,
                "period-effect vector does not match the design width");
  for (int i = 0; i < design.rows(); ++i)
    for (int j = 0; j < design.cols(); ++j)
      if (design(i, j) != 0 && design(i, j) != 1)
        throw Error(errc::invalid_spec,
                    "treatment indicators must be 0 or 1");
}

}  // namespace detail

/// Variance ratio for the treatment effect: sandwich variance under working
/// independence over model-based variance under the true covariance, both
/// evaluated at the true parameters for one realized size matrix.
inline double are_tau(const Eigen::MatrixXi& design, Link link,
                      const Eigen::VectorXd& beta, double delta,
                      const CorrelationParams& truth,
                      const Eigen::MatrixXi& sizes) {
  detail::check_are_inputs(design, beta);
  if (sizes.rows() != design.rows() || sizes.cols() != design.cols())
    throw Error(errc::invalid_spec,
                "size matrix does not match the design shape");
  const int n_clusters = static_cast<int>(design.rows());
  const int n_periods = static_cast<int>(design.cols());
  const int p = n_periods + 1;

  std::vector<int> periods(static_cast<std::size_t>(n_periods));
  for (int j = 0; j < n_periods; ++j) periods[static_cast<std::size_t>(j)] = j;

  Eigen::MatrixXd a_ind = Eigen::MatrixXd::Zero(p, p);
  Eigen::MatrixXd m_ind = Eigen::MatrixXd::Zero(p, p);
  Eigen::MatrixXd a_true = Eigen::MatrixXd::Zero(p, p);

  for (int i = 0; i < n_clusters; ++i) {
    Eigen::VectorXd mu(n_periods);
    Eigen::MatrixXd d1 = Eigen::MatrixXd::Zero(n_periods, p);
    Eigen::VectorXi n(n_periods);
    for (int j = 0; j < n_periods; ++j) {
      const double x = static_cast<double>(design(i, j));
      const double lp = beta(j) + delta * x;
      mu(j) = inverse_link(link, lp);
      const double deriv = mean_derivative(link, mu(j));
      d1(j, j) = deriv;
      d1(j, n_periods) = deriv * x;
      if (sizes(i, j) < 1)
        throw Error(errc::invalid_spec, "sizes must be >= 1");
      n(j) = sizes(i, j);
    }
    const ClusterCovariance cov = induced_covariance(mu, n, periods, truth);

    Eigen::VectorXd psi_inv(n_periods);
    for (int j = 0; j < n_periods; ++j)
      psi_inv(j) =
          static_cast<double>(n(j)) / (mu(j) * (1.0 - mu(j)));
    const Eigen::MatrixXd wd1 = psi_inv.asDiagonal() * d1;
    a_ind += d1.transpose() * wd1;
    m_ind += wd1.transpose() * cov.v1 * wd1;

    const Eigen::LLT<Eigen::MatrixXd> llt(cov.v1);
    if (llt.info() != Eigen::Success)
      throw Error(errc::infeasible_parameters,
                  "true covariance is not positive definite");
    a_true += d1.transpose() * llt.solve(d1);
  }

  const Eigen::FullPivLU<Eigen::MatrixXd> lu_ind(a_ind);
  if (!lu_ind.isInvertible())
    throw Error(errc::degenerate_design,
                "working-independence bread matrix is singular");
  const Eigen::FullPivLU<Eigen::MatrixXd> lu_true(a_true);
  if (!lu_true.isInvertible())
    throw Error(errc::degenerate_design,
                "true-covariance bread matrix is singular");

  const Eigen::MatrixXd inv_ind = lu_ind.inverse();
  const Eigen::MatrixXd cov_ind = inv_ind * m_ind * inv_ind;
  const double denom = lu_true.inverse()(p - 1, p - 1);
  return cov_ind(p - 1, p - 1) / denom;
}

struct AreReport {
  int replicates = 0;
  double mean = 0.0;
  double mc_se = 0.0;
  std::map<double, double> quantiles;  // probability -> tau quantile
  std::vector<double> values;          // per replicate, in replicate order
};

/// Monte Carlo summary of the efficiency ratio over resampled size matrices.
/// Each replicate has its own counter-derived stream, so the report is
/// byte-identical for any thread count.
inline AreReport are_estimate(const AreConfig& config) {
  detail::check_are_inputs(config.design, config.beta);
  if (config.replicates < 1)
    throw Error(errc::invalid_spec, "need at least one replicate");
  const int n_clusters = static_cast<int>(config.design.rows());
  const int n_periods = static_cast<int>(config.design.cols());

  AreReport report;
  report.replicates = config.replicates;
  report.values.assign(static_cast<std::size_t>(config.replicates), 0.0);

  constexpr std::uint64_t kStreamTag = 0x6172656661ull;
  detail::parallel_for(
      config.replicates, config.threads, [&](int k) {
        std::mt19937_64 g = rng::stream(
            config.seed, {kStreamTag, static_cast<std::uint64_t>(k)});
        Eigen::MatrixXi sizes(n_clusters, n_periods);
        for (int i = 0; i < n_clusters; ++i)
          for (int j = 0; j < n_periods; ++j)
            sizes(i, j) = config.sizes.draw(g);
        report.values[static_cast<std::size_t>(k)] =
            are_tau(config.design, config.link, config.beta, config.delta,
                    config.truth, sizes);
      });

  double sum = 0.0;
  for (double v : report.values) sum += v;
  report.mean = sum / static_cast<double>(config.replicates);
  double ss = 0.0;
  for (double v : report.values) ss += (v - report.mean) * (v - report.mean);
  const double variance =
      config.replicates > 1
          ? ss / static_cast<double>(config.replicates - 1)
          : 0.0;
  report.mc_se =
      std::sqrt(variance / static_cast<double>(config.replicates));

  std::vector<double> sorted = report.values;
  std::sort(sorted.begin(), sorted.end());
  for (double prob : {0.025, 0.25, 0.5, 0.75, 0.975})
    report.quantiles[prob] =
        numeric::quantile_sorted(sorted.data(), sorted.size(), prob);
  return report;
}

}  // namespace swgee
