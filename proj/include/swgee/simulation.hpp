#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "swgee/correlation.hpp"
#include "swgee/efficiency.hpp"
#include "swgee/errors.hpp"
#include "swgee/gee.hpp"
#include "swgee/inference.hpp"
#include "swgee/parallel.hpp"
#include "swgee/rng.hpp"
#include "swgee/trial_data.hpp"

namespace swgee {

namespace detail {

/// Clamp a conditional mean that drifted out of [0, 1] by rounding noise;
/// anything further out is a genuine feasibility failure of the
/// conditional-linear construction.
inline double feasible_mean(double lambda, int index) {
  constexpr double slack = 1e-9;
  if (lambda < 0.0) {
    if (lambda >= -slack) return 0.0;
    throw Error(errc::feasibility,
                "conditional mean for component " + std::to_string(index) +
                    " is " + std::to_string(lambda));
  }
  if (lambda > 1.0) {
    if (lambda <= 1.0 + slack) return 1.0;
    throw Error(errc::feasibility,
                "conditional mean for component " + std::to_string(index) +
                    " is " + std::to_string(lambda));
  }
  return lambda;
}

}  // namespace detail

/// Sequential conditional-linear sampler for an arbitrary dense mean vector
/// and correlation matrix. The regression coefficients b_t of each component
/// on its predecessors are precomputed once, so repeated draws cost O(N^2).
class QaqishSampler {
 public:
  QaqishSampler(Eigen::VectorXd means, const Eigen::MatrixXd& corr)
      : mu_(std::move(means)) {
    const int n = static_cast<int>(mu_.size());
    if (corr.rows() != n || corr.cols() != n)
      throw Error(errc::input,
                  "correlation matrix does not match the mean vector");
    for (int t = 0; t < n; ++t)
      if (!(mu_(t) > 0.0 && mu_(t) < 1.0))
        throw Error(errc::input,
                    "means must lie strictly inside (0, 1)");

    Eigen::VectorXd sd(n);
    for (int t = 0; t < n; ++t) sd(t) = std::sqrt(mu_(t) * (1.0 - mu_(t)));
    Eigen::MatrixXd sigma = sd.asDiagonal() * corr * sd.asDiagonal();
    sigma = 0.5 * (sigma + sigma.transpose());

    coef_.resize(static_cast<std::size_t>(n));
    const Eigen::LLT<Eigen::MatrixXd> llt(sigma);
    if (llt.info() == Eigen::Success) {
      // One Cholesky factor yields every b_t by a triangular solve:
      // Sigma_{<t,<t} = A A^T and Sigma_{<t,t} = A l_t with A the leading
      // block of L and l_t the leading part of row t, so A^T b_t = l_t.
      const Eigen::MatrixXd l = llt.matrixL();
      for (int t = 1; t < n; ++t) {
        const Eigen::VectorXd lt = l.row(t).head(t).transpose();
        coef_[static_cast<std::size_t>(t)] =
            l.topLeftCorner(t, t)
                .transpose()
                .triangularView<Eigen::Upper>()
                .solve(lt);
      }
    } else {
      // Semidefinite correlation (e.g. a comonotone pair): solve each
      // leading system directly and insist it is consistent.
      for (int t = 1; t < n; ++t) {
        const Eigen::MatrixXd block = sigma.topLeftCorner(t, t);
        const Eigen::VectorXd target = sigma.col(t).head(t);
        const Eigen::VectorXd b =
            block.completeOrthogonalDecomposition().solve(target);
        if ((block * b - target).cwiseAbs().maxCoeff() >
            1e-8 * std::max(1.0, target.cwiseAbs().maxCoeff()))
          throw Error(errc::infeasible_parameters,
                      "covariance is not positive semidefinite");
        coef_[static_cast<std::size_t>(t)] = b;
      }
    }
  }

  int size() const { return static_cast<int>(mu_.size()); }

  /// Conditional mean of component t given the realized prefix.
  double conditional_mean(int t, const Eigen::VectorXd& prefix) const {
    double lambda = mu_(t);
    if (t > 0)
      lambda += coef_[static_cast<std::size_t>(t)].dot(
          prefix.head(t) - mu_.head(t));
    return detail::feasible_mean(lambda, t);
  }

  Eigen::VectorXi draw(std::mt19937_64& g) const {
    const int n = size();
    Eigen::VectorXi y(n);
    Eigen::VectorXd realized(n);
    for (int t = 0; t < n; ++t) {
      const double lambda = conditional_mean(t, realized);
      y(t) = rng::bernoulli(g, lambda) ? 1 : 0;
      realized(t) = static_cast<double>(y(t));
    }
    return y;
  }

 private:
  Eigen::VectorXd mu_;
  std::vector<Eigen::VectorXd> coef_;  // coef_[t] regresses y_t on y_{<t}
};

/// One-shot dense draw.
inline Eigen::VectorXi qaqish_sample(const Eigen::VectorXd& means,
                                     const Eigen::MatrixXd& corr,
                                     std::mt19937_64& g) {
  return QaqishSampler(means, corr).draw(g);
}

/// Conditional-linear sampler for one cluster whose individual-level
/// correlation depends only on the period pair. Within-period
/// exchangeability collapses each conditioning step to a system over the
/// periods already touched, so no N_i x N_i matrix is ever formed.
class ClusterSampler {
 public:
  ClusterSampler(Eigen::VectorXd period_means, Eigen::VectorXi period_sizes,
                 const CorrelationParams& params)
      : mu_(std::move(period_means)), n_(std::move(period_sizes)) {
    const int j_count = static_cast<int>(mu_.size());
    if (n_.size() != j_count)
      throw Error(errc::input, "period sizes do not match period means");
    nu_.resize(j_count);
    for (int j = 0; j < j_count; ++j) {
      if (!(mu_(j) > 0.0 && mu_(j) < 1.0))
        throw Error(errc::input, "means must lie strictly inside (0, 1)");
      if (n_(j) < 0) throw Error(errc::input, "period sizes must be >= 0");
      nu_(j) = mu_(j) * (1.0 - mu_(j));
    }
    gamma_.resize(j_count, j_count);
    for (int a = 0; a < j_count; ++a)
      for (int b = 0; b < j_count; ++b)
        gamma_(a, b) = params.pair_correlation(a, b);
  }

  int periods() const { return static_cast<int>(mu_.size()); }
  int total_size() const { return n_.sum(); }

  /// Conditional mean of the next individual in period j, given per-period
  /// counts and outcome sums of everything drawn so far.
  double conditional_mean(int j, const Eigen::VectorXi& counts,
                          const Eigen::VectorXd& sums, int index) const {
    std::vector<int> active;
    for (int l = 0; l < periods(); ++l)
      if (counts(l) > 0) active.push_back(l);
    if (active.empty()) return mu_(j);

    const int g_count = static_cast<int>(active.size());
    Eigen::MatrixXd a(g_count, g_count);
    Eigen::VectorXd rhs(g_count);
    for (int r = 0; r < g_count; ++r) {
      const int l = active[static_cast<std::size_t>(r)];
      for (int c = 0; c < g_count; ++c) {
        const int lp = active[static_cast<std::size_t>(c)];
        if (r == c)
          a(r, c) = nu_(l) * (1.0 + (counts(l) - 1) * gamma_(l, l));
        else
          a(r, c) = std::sqrt(nu_(l) * nu_(lp)) * gamma_(l, lp) *
                    static_cast<double>(counts(lp));
      }
      rhs(r) = std::sqrt(nu_(l) * nu_(j)) * gamma_(l, j);
    }
    const Eigen::FullPivLU<Eigen::MatrixXd> lu(a);
    if (!lu.isInvertible())
      throw Error(errc::infeasible_parameters,
                  "conditioning system is singular");
    const Eigen::VectorXd w = lu.solve(rhs);

    double lambda = mu_(j);
    for (int r = 0; r < g_count; ++r) {
      const int l = active[static_cast<std::size_t>(r)];
      lambda += w(r) * (sums(l) - counts(l) * mu_(l));
    }
    return detail::feasible_mean(lambda, index);
  }

  /// Per-period event totals from one pass over the cluster, period-major.
  Eigen::VectorXi draw_totals(std::mt19937_64& g) const {
    const int j_count = periods();
    Eigen::VectorXi counts = Eigen::VectorXi::Zero(j_count);
    Eigen::VectorXd sums = Eigen::VectorXd::Zero(j_count);
    Eigen::VectorXi totals = Eigen::VectorXi::Zero(j_count);
    int index = 0;
    for (int j = 0; j < j_count; ++j) {
      for (int t = 0; t < n_(j); ++t, ++index) {
        const double lambda = conditional_mean(j, counts, sums, index);
        const int y = rng::bernoulli(g, lambda) ? 1 : 0;
        counts(j) += 1;
        sums(j) += static_cast<double>(y);
        totals(j) += y;
      }
    }
    return totals;
  }

 private:
  Eigen::VectorXd mu_;
  Eigen::VectorXi n_;
  Eigen::VectorXd nu_;
  Eigen::MatrixXd gamma_;
};

struct SimConfig {
  int clusters = 12;
  int periods = 5;
  Link link = Link::logit;
  double delta = std::log(0.5);
  double baseline_prevalence = 0.35;
  double decrement_base = 0.1;   // first period-to-period drop on link scale
  double decrement_ratio = 0.5;  // geometric shrink factor of the drops
  CorrelationParams truth;
  int size_low = 50;
  int size_high = 150;
  int replicates = 500;
  std::uint64_t seed = 0;
  Adjustment adjustment = Adjustment::maee;  // fit whose intervals score
  std::vector<Correction> corrections = all_corrections();
  int max_redraws = 100;
  int threads = 1;
  int max_outer_iterations = 200;
  double tolerance = 1e-8;
};

namespace detail {

inline void check_sim_config(const SimConfig& config) {
  if (config.periods < 2)
    throw Error(errc::invalid_spec, "need at least 2 periods");
  if (config.clusters < 1)
    throw Error(errc::invalid_spec, "need at least 1 cluster");
  if (config.clusters % (config.periods - 1) != 0)
    throw Error(errc::invalid_spec,
                "cluster count must divide evenly into the " +
                    std::to_string(config.periods - 1) +
                    " crossover waves");
  if (!(config.baseline_prevalence > 0.0 &&
        config.baseline_prevalence < 1.0))
    throw Error(errc::invalid_spec,
                "baseline prevalence must lie in (0, 1)");
  if (config.size_low < 1 || config.size_high < config.size_low)
    throw Error(errc::invalid_spec,
                "size bounds must satisfy 1 <= low <= high");
  if (config.replicates < 1)
    throw Error(errc::invalid_spec, "need at least one replicate");
  if (config.max_redraws < 1)
    throw Error(errc::invalid_spec, "max_redraws must be >= 1");
}

constexpr std::uint64_t kTrialStreamTag = 0x747269616Cull;

}  // namespace detail

/// Period effects on the link scale: the first period hits the baseline
/// prevalence, then geometrically shrinking decrements.
inline Eigen::VectorXd sim_period_effects(const SimConfig& config) {
  Eigen::VectorXd beta(config.periods);
  beta(0) = link_of_mean(config.link, config.baseline_prevalence);
  for (int j = 1; j < config.periods; ++j)
    beta(j) = beta(j - 1) - config.decrement_base *
                                std::pow(config.decrement_ratio, j);
  return beta;
}

/// True parameter vector in estimate order (period effects, treatment
/// effect, correlation parameters).
inline Eigen::VectorXd sim_truth_vector(const SimConfig& config) {
  const Eigen::VectorXd beta = sim_period_effects(config);
  const Eigen::VectorXd alpha = config.truth.vec();
  Eigen::VectorXd truth(beta.size() + 1 + alpha.size());
  truth.head(beta.size()) = beta;
  truth(beta.size()) = config.delta;
  truth.tail(alpha.size()) = alpha;
  return truth;
}

inline std::vector<std::string> sim_parameter_names(const SimConfig& config) {
  std::vector<std::string> names;
  for (int j = 1; j <= config.periods; ++j)
    names.push_back("beta[" + std::to_string(j) + "]");
  names.push_back("delta");
  if (config.truth.dim() >= 1) {
    names.push_back("alpha0");
    if (config.truth.tag == Structure::nested_exchangeable)
      names.push_back("alpha1");
    if (config.truth.tag == Structure::exponential_decay)
      names.push_back("rho");
  }
  return names;
}

/// One synthetic trial: equal-wave staircase, sizes DiscreteUniform, then a
/// conditional-linear draw per cluster. Deterministic in (seed, replicate);
/// an infeasible draw rejects the whole replicate and redraws its sizes, up
/// to max_redraws.
inline TrialData simulate_trial(const SimConfig& config, int replicate) {
  detail::check_sim_config(config);
  std::mt19937_64 g = rng::stream(
      config.seed,
      {detail::kTrialStreamTag, static_cast<std::uint64_t>(replicate)});

  const Eigen::MatrixXi design =
      staircase_design(config.clusters, config.periods);
  const Eigen::VectorXd beta = sim_period_effects(config);

  Eigen::MatrixXd mu(config.clusters, config.periods);
  for (int i = 0; i < config.clusters; ++i)
    for (int j = 0; j < config.periods; ++j)
      mu(i, j) = inverse_link(
          config.link, beta(j) + config.delta * design(i, j));

  for (int attempt = 0; attempt < config.max_redraws; ++attempt) {
    Eigen::MatrixXi sizes(config.clusters, config.periods);
    for (int i = 0; i < config.clusters; ++i)
      for (int j = 0; j < config.periods; ++j)
        sizes(i, j) = static_cast<int>(
            rng::uniform_int(g, config.size_low, config.size_high));

    Eigen::MatrixXi totals(config.clusters, config.periods);
    bool feasible = true;
    for (int i = 0; i < config.clusters && feasible; ++i) {
      const ClusterSampler sampler(mu.row(i).transpose(),
                                   sizes.row(i).transpose(), config.truth);
      try {
        totals.row(i) = sampler.draw_totals(g).transpose();
      } catch (const Error& e) {
        if (e.code() != errc::feasibility) throw;
        feasible = false;
      }
    }
    if (!feasible) continue;

    TrialData data;
    for (int i = 1; i <= config.clusters; ++i)
      data.cluster_ids.push_back("c" + std::to_string(i));
    for (int j = 1; j <= config.periods; ++j)
      data.period_labels.push_back(std::to_string(j));
    data.sizes = sizes;
    data.totals = totals;
    data.treatment = design;
    return data;
  }
  throw Error(errc::feasibility,
              "replicate " + std::to_string(replicate) +
                  " stayed infeasible after " +
                  std::to_string(config.max_redraws) + " size redraws");
}

struct ExperimentReport {
  int replicates_requested = 0;
  int replicates_used = 0;
  int non_converged = 0;
  int infeasible = 0;
  bool unreliable = false;  // more than 5% of replicates excluded
  Adjustment coverage_adjustment = Adjustment::maee;
  std::vector<std::string> parameter_names;
  Eigen::VectorXd truth;
  Eigen::VectorXd bias_uee;   // percent relative bias; NaN where truth = 0
  Eigen::VectorXd bias_maee;
  std::map<std::string, Eigen::VectorXd> coverage;  // estimator -> per param
  std::vector<int> used_replicates;   // original replicate indices
  Eigen::MatrixXd estimates_uee;      // row per used replicate
  Eigen::MatrixXd estimates_maee;
  double max_alpha_equation_residual = 0.0;
};

namespace detail {

struct ReplicateOutcome {
  bool infeasible = false;
  bool converged = false;
  Eigen::VectorXd uee;
  Eigen::VectorXd maee;
  std::map<std::string, std::vector<int>> covered;
  double alpha_residual = 0.0;
};

inline Eigen::VectorXd stack_estimates(const FitResult& fit) {
  const Eigen::VectorXd alpha = fit.alpha.vec();
  Eigen::VectorXd out(fit.theta.size() + alpha.size());
  out.head(fit.theta.size()) = fit.theta;
  out.tail(alpha.size()) = alpha;
  return out;
}

}  // namespace detail

/// Full bias/coverage experiment: every replicate is fitted with both the
/// uncorrected and the bias-adjusted correlation equations under the true
/// structure; intervals from the selected fit are scored against the truth.
inline ExperimentReport run_experiment(const SimConfig& config) {
  detail::check_sim_config(config);

  ExperimentReport report;
  report.replicates_requested = config.replicates;
  report.coverage_adjustment = config.adjustment;
  report.parameter_names = sim_parameter_names(config);
  report.truth = sim_truth_vector(config);
  const int n_params = static_cast<int>(report.truth.size());
  const int n_theta = config.periods + 1;

  std::vector<std::string> estimator_names = {"model_based"};
  for (Correction c : config.corrections)
    estimator_names.push_back(correction_name(c));

  std::vector<detail::ReplicateOutcome> outcomes(
      static_cast<std::size_t>(config.replicates));

  detail::parallel_for(config.replicates, config.threads, [&](int k) {
    detail::ReplicateOutcome& out =
        outcomes[static_cast<std::size_t>(k)];
    TrialData data;
    try {
      data = simulate_trial(config, k);
    } catch (const Error& e) {
      if (e.code() != errc::feasibility) throw;
      out.infeasible = true;
      return;
    }

    ModelSpec spec;
    spec.link = config.link;
    spec.structure = config.truth.tag;
    spec.max_outer_iterations = config.max_outer_iterations;
    spec.tolerance = config.tolerance;

    FitResult fit_uee, fit_maee;
    try {
      spec.adjustment = Adjustment::uee;
      fit_uee = fit(data, spec);
      spec.adjustment = Adjustment::maee;
      fit_maee = fit(data, spec);
    } catch (const Error&) {
      return;  // counted as non-converged
    }
    if (!fit_uee.converged || !fit_maee.converged) return;

    out.converged = true;
    out.uee = detail::stack_estimates(fit_uee);
    out.maee = detail::stack_estimates(fit_maee);

    const FitResult& scored =
        config.adjustment == Adjustment::uee ? fit_uee : fit_maee;

    // Residual of the correlation estimating equation at the stored fit.
    // Projected or boundary solutions are constrained roots where the
    // unconstrained equation need not vanish, so they are not scored.
    if (config.truth.tag == Structure::exponential_decay) {
      if (!scored.rho_boundary && !scored.alpha_projected)
        out.alpha_residual = std::fabs(
            ed_rho_equation(scored.clusters, scored.spec.adjustment,
                            scored.alpha.alpha0, scored.alpha.rho));
    } else if (config.truth.dim() > 0 && !scored.alpha_projected) {
      out.alpha_residual =
          alpha_score(scored).cwiseAbs().maxCoeff();
    }

    const IntervalReport mb =
        intervals(scored, model_based(scored), 0.95);
    std::vector<int> mb_cover(static_cast<std::size_t>(n_params), 0);
    for (int k2 = 0; k2 < n_theta; ++k2)
      mb_cover[static_cast<std::size_t>(k2)] =
          (mb.rows[static_cast<std::size_t>(k2)].lower <=
               report.truth(k2) &&
           report.truth(k2) <=
               mb.rows[static_cast<std::size_t>(k2)].upper)
              ? 1
              : 0;
    for (int k2 = n_theta; k2 < n_params; ++k2)
      mb_cover[static_cast<std::size_t>(k2)] = -1;  // not covered by design
    out.covered["model_based"] = std::move(mb_cover);

    for (Correction c : config.corrections) {
      const IntervalReport rep =
          intervals(scored, sandwich(scored, c), 0.95);
      std::vector<int> cover(static_cast<std::size_t>(n_params), 0);
      for (int k2 = 0; k2 < n_params; ++k2)
        cover[static_cast<std::size_t>(k2)] =
            (rep.rows[static_cast<std::size_t>(k2)].lower <=
                 report.truth(k2) &&
             report.truth(k2) <=
                 rep.rows[static_cast<std::size_t>(k2)].upper)
                ? 1
                : 0;
      out.covered[correction_name(c)] = std::move(cover);
    }
  });

  std::vector<int> used;
  for (int k = 0; k < config.replicates; ++k) {
    const detail::ReplicateOutcome& out =
        outcomes[static_cast<std::size_t>(k)];
    if (out.infeasible)
      ++report.infeasible;
    else if (!out.converged)
      ++report.non_converged;
    else
      used.push_back(k);
  }
  report.replicates_used = static_cast<int>(used.size());
  report.used_replicates = used;
  const int excluded = report.infeasible + report.non_converged;
  report.unreliable =
      excluded > 0.05 * static_cast<double>(config.replicates);
  if (used.empty())
    throw Error(errc::non_convergence,
                "no replicate produced a usable pair of fits");

  report.estimates_uee.resize(report.replicates_used, n_params);
  report.estimates_maee.resize(report.replicates_used, n_params);
  for (int r = 0; r < report.replicates_used; ++r) {
    const detail::ReplicateOutcome& out =
        outcomes[static_cast<std::size_t>(used[static_cast<std::size_t>(r)])];
    report.estimates_uee.row(r) = out.uee.transpose();
    report.estimates_maee.row(r) = out.maee.transpose();
    report.max_alpha_equation_residual = std::max(
        report.max_alpha_equation_residual, out.alpha_residual);
  }

  const auto percent_bias = [&](const Eigen::MatrixXd& est) {
    Eigen::VectorXd bias(n_params);
    for (int p = 0; p < n_params; ++p) {
      const double mean = est.col(p).mean();
      bias(p) = report.truth(p) == 0.0
                    ? std::numeric_limits<double>::quiet_NaN()
                    : 100.0 * (mean - report.truth(p)) / report.truth(p);
    }
    return bias;
  };
  report.bias_uee = percent_bias(report.estimates_uee);
  report.bias_maee = percent_bias(report.estimates_maee);

  for (const std::string& name : estimator_names) {
    Eigen::VectorXd cov(n_params);
    for (int p = 0; p < n_params; ++p) {
      long hits = 0;
      long counted = 0;
      for (int idx : used) {
        const int flag =
            outcomes[static_cast<std::size_t>(idx)].covered.at(name)[
                static_cast<std::size_t>(p)];
        if (flag < 0) continue;  // estimator does not cover this parameter
        ++counted;
        hits += flag;
      }
      cov(p) = counted == 0
                   ? std::numeric_limits<double>::quiet_NaN()
                   : static_cast<double>(hits) /
                         static_cast<double>(counted);
    }
    report.coverage[name] = cov;
  }
  return report;
}

}  // namespace swgee
