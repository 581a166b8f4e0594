#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "swgee/correlation.hpp"
#include "swgee/errors.hpp"
#include "swgee/numeric.hpp"
#include "swgee/trial_data.hpp"

namespace swgee {

enum class Link { logit, log, identity };

inline const char* link_name(Link l) {
  switch (l) {
    case Link::logit: return "logit";
    case Link::log: return "log";
    case Link::identity: return "identity";
  }
  return "?";
}

inline double inverse_link(Link link, double x) {
  switch (link) {
    case Link::logit:
      if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
      {
        const double e = std::exp(x);
        return e / (1.0 + e);
      }
    case Link::log: return std::exp(x);
    case Link::identity: return x;
  }
  return x;
}

inline double link_of_mean(Link link, double mu) {
  switch (link) {
    case Link::logit: return std::log(mu / (1.0 - mu));
    case Link::log: return std::log(mu);
    case Link::identity: return mu;
  }
  return mu;
}

/// d(mean)/d(linear predictor), expressed through the mean itself.
inline double mean_derivative(Link link, double mu) {
  switch (link) {
    case Link::logit: return mu * (1.0 - mu);
    case Link::log: return mu;
    case Link::identity: return 1.0;
  }
  return 1.0;
}

enum class Adjustment { uee, maee };

inline const char* adjustment_name(Adjustment a) {
  return a == Adjustment::uee ? "UEE" : "MAEE";
}

struct ModelSpec {
  Link link = Link::logit;
  Structure structure = Structure::nested_exchangeable;
  Adjustment adjustment = Adjustment::maee;
  int max_outer_iterations = 200;
  double tolerance = 1e-8;
  /// Nested-exchangeable only: force the between-period ICC to track the
  /// within-period ICC (the exchangeable reduction).
  bool constrain_equal_icc = false;
  /// Exponential-decay only: hold the decay factor fixed instead of
  /// estimating it.
  std::optional<double> fixed_rho;
};

/// Everything the variance machinery needs about one cluster, frozen at the
/// solution. Vectors are indexed by the cluster's observed periods; `pairs`
/// is the shared row-major (a <= b) stacking of distinct period pairs.
struct ClusterWork {
  int index = -1;
  std::vector<int> periods;
  Eigen::VectorXi n;
  Eigen::VectorXd ybar;
  Eigen::VectorXd x;
  Eigen::VectorXd mu;
  Eigen::MatrixXd d1;
  Eigen::MatrixXd v1;
  Eigen::MatrixXd h1;
  Eigen::MatrixXd h2;
  Eigen::VectorXd s_raw;
  Eigen::VectorXd s_adj;
  Eigen::VectorXd eta;
  Eigen::MatrixXd d2;
  std::vector<std::pair<int, int>> pairs;

  Eigen::VectorXd nu() const {
    return (mu.array() * (1.0 - mu.array())).matrix();
  }
  Eigen::VectorXd residual() const { return ybar - mu; }
};

struct FitResult {
  ModelSpec spec;
  std::vector<std::string> period_labels;
  Eigen::VectorXd theta;  // (beta_1..beta_J, delta)
  CorrelationParams alpha;
  bool converged = false;
  int iterations = 0;
  double score_norm = 0.0;   // sup norm of the mean quasi-score at the fit
  Eigen::MatrixXd mu_hat;    // clusters x periods; NaN where unobserved
  Eigen::MatrixXd info;      // sum D1' V1^{-1} D1 at the fit
  Eigen::VectorXd alpha_raw; // last correlation update before projection
  bool alpha_projected = false;
  bool mu_clamped = false;
  bool rho_boundary = false;
  std::vector<std::string> warnings;
  std::vector<ClusterWork> clusters;  // contributing clusters only

  int n_mean_parameters() const { return static_cast<int>(theta.size()); }
};

struct MeanScore {
  Eigen::VectorXd u1;
  Eigen::MatrixXd info;
};

namespace detail {

constexpr double kMeanClamp = 1e-10;

struct ClusterModel {
  int index = -1;
  std::vector<int> periods;
  Eigen::VectorXi n;
  Eigen::VectorXd ybar;
  Eigen::VectorXd x;
  Eigen::VectorXd mu;
  Eigen::MatrixXd d1;
  ClusterCovariance cov;
};

/// Evaluate one cluster's means, mean-model Jacobian, and working covariance
/// at (theta, params). Means are clamped to (kMeanClamp, 1 - kMeanClamp)
/// before variance evaluation; `clamped` reports whether that fired.
inline ClusterModel cluster_model(const TrialData& data, int i, Link link,
                                  const Eigen::VectorXd& theta,
                                  const CorrelationParams& params,
                                  bool* clamped) {
  const int J = data.n_periods();
  const int p = J + 1;
  ClusterModel m;
  m.index = i;
  m.periods = data.observed_periods(i);
  const int mi = static_cast<int>(m.periods.size());
  m.n.resize(mi);
  m.ybar.resize(mi);
  m.x.resize(mi);
  m.mu.resize(mi);
  m.d1.setZero(mi, p);
  for (int a = 0; a < mi; ++a) {
    const int j = m.periods[a];
    m.n(a) = data.sizes(i, j);
    m.ybar(a) = data.cp_mean(i, j);
    m.x(a) = data.treatment(i, j);
    double mu = inverse_link(link, theta(j) + theta(J) * m.x(a));
    if (mu < kMeanClamp || mu > 1.0 - kMeanClamp) {
      mu = std::clamp(mu, kMeanClamp, 1.0 - kMeanClamp);
      if (clamped) *clamped = true;
    }
    m.mu(a) = mu;
    const double deriv = mean_derivative(link, mu);
    m.d1(a, j) = deriv;
    m.d1(a, J) = deriv * m.x(a);
  }
  try {
    m.cov = induced_covariance(m.mu, m.n, m.periods, params);
  } catch (const Error& e) {
    if (e.code() == errc::infeasible_parameters)
      throw Error(errc::infeasible_parameters,
                  std::string(e.what()) + " (cluster " + data.cluster_ids[i] +
                      ")");
    throw;
  }
  return m;
}

}  // namespace detail

/// Quasi-score and information of the mean model at (theta, params):
/// U1 = sum_i D1' V1^{-1} (ybar - mu), info = sum_i D1' V1^{-1} D1.
inline MeanScore mean_score(const TrialData& data, Link link,
                            const Eigen::VectorXd& theta,
                            const CorrelationParams& params) {
  const int p = data.n_periods() + 1;
  MeanScore out;
  out.u1.setZero(p);
  out.info.setZero(p, p);
  for (int i = 0; i < data.n_clusters(); ++i) {
    bool clamped = false;
    detail::ClusterModel m =
        detail::cluster_model(data, i, link, theta, params, &clamped);
    if (m.periods.empty()) continue;
    const Eigen::LLT<Eigen::MatrixXd> llt(m.cov.v1);
    if (llt.info() != Eigen::Success)
      throw Error(errc::infeasible_parameters,
                  "singular working covariance for cluster " +
                      data.cluster_ids[i]);
    const Eigen::MatrixXd vi_d1 = llt.solve(m.d1);
    out.u1 += vi_d1.transpose() * (m.ybar - m.mu);
    out.info += m.d1.transpose() * vi_d1;
  }
  return out;
}

/// Per-cluster residual products and mean-model leverage at theta. Both the
/// raw cross-products and the leverage-adjusted versions are computed; which
/// one drives the correlation update is the caller's choice.
inline std::vector<ClusterWork> residual_products(
    const TrialData& data, Link link, const Eigen::VectorXd& theta,
    const CorrelationParams& params) {
  std::vector<detail::ClusterModel> models;
  const int p = data.n_periods() + 1;
  Eigen::MatrixXd info = Eigen::MatrixXd::Zero(p, p);
  std::vector<Eigen::MatrixXd> vi_d1s;
  for (int i = 0; i < data.n_clusters(); ++i) {
    detail::ClusterModel m =
        detail::cluster_model(data, i, link, theta, params, nullptr);
    if (m.periods.empty()) continue;
    const Eigen::LLT<Eigen::MatrixXd> llt(m.cov.v1);
    if (llt.info() != Eigen::Success)
      throw Error(errc::infeasible_parameters,
                  "singular working covariance for cluster " +
                      data.cluster_ids[i]);
    vi_d1s.push_back(llt.solve(m.d1));
    info += m.d1.transpose() * vi_d1s.back();
    models.push_back(std::move(m));
  }
  Eigen::FullPivLU<Eigen::MatrixXd> info_lu(info);
  if (!info_lu.isInvertible())
    throw Error(errc::unidentified_parameter,
                "mean-model information is singular");
  const Eigen::MatrixXd minv = info_lu.inverse();

  std::vector<ClusterWork> out;
  out.reserve(models.size());
  for (std::size_t k = 0; k < models.size(); ++k) {
    const detail::ClusterModel& m = models[k];
    const int mi = static_cast<int>(m.periods.size());
    ClusterWork w;
    w.index = m.index;
    w.periods = m.periods;
    w.n = m.n;
    w.ybar = m.ybar;
    w.x = m.x;
    w.mu = m.mu;
    w.d1 = m.d1;
    w.v1 = m.cov.v1;
    w.pairs = m.cov.pairs;
    w.h1 = m.d1 * minv * vi_d1s[k].transpose();

    const Eigen::VectorXd r = m.ybar - m.mu;
    const Eigen::MatrixXd f = Eigen::MatrixXd::Identity(mi, mi) - w.h1;
    const Eigen::FullPivLU<Eigen::MatrixXd> f_lu(f);
    if (!f_lu.isInvertible())
      throw Error(errc::leverage_degeneracy,
                  "cluster " + data.cluster_ids[m.index] +
                      " fully determines a mean parameter");
    const Eigen::VectorXd t = f_lu.solve(r);

    const int npairs = static_cast<int>(w.pairs.size());
    w.s_raw.resize(npairs);
    w.s_adj.resize(npairs);
    for (int row = 0; row < npairs; ++row) {
      const auto [a, b] = w.pairs[row];
      w.s_raw(row) = r(a) * r(b);
      w.s_adj(row) = 0.5 * (t(a) * r(b) + r(a) * t(b));
    }
    out.push_back(std::move(w));
  }
  return out;
}

namespace detail {

inline const Eigen::VectorXd& products(const ClusterWork& w, Adjustment adj) {
  return adj == Adjustment::maee ? w.s_adj : w.s_raw;
}

}  // namespace detail

/// Closed-form nested-exchangeable update. Returns the raw solution of the
/// two decoupled normal equations; feasibility projection is the caller's
/// concern. Diagonal products identify alpha0, off-diagonal ones alpha1.
inline std::pair<double, double> ne_update(const std::vector<ClusterWork>& works,
                                           Adjustment adj) {
  double num0 = 0.0, den0 = 0.0, num1 = 0.0, den1 = 0.0;
  for (const ClusterWork& w : works) {
    const Eigen::VectorXd nu = w.nu();
    const Eigen::VectorXd& s = detail::products(w, adj);
    for (std::size_t row = 0; row < w.pairs.size(); ++row) {
      const auto [a, b] = w.pairs[row];
      if (a == b) {
        const double frac = (w.n(a) - 1.0) / w.n(a);
        num0 += frac * nu(a) * (s(row) - nu(a) / w.n(a));
        den0 += frac * frac * nu(a) * nu(a);
      } else {
        // j != l counts both orderings; the factor 2 cancels in the ratio
        num1 += 2.0 * s(row) * std::sqrt(nu(a) * nu(b));
        den1 += 2.0 * nu(a) * nu(b);
      }
    }
  }
  if (den0 == 0.0)
    throw Error(errc::unidentified_parameter,
                "within-period ICC needs a cluster-period with n >= 2");
  if (den1 == 0.0)
    throw Error(errc::unidentified_parameter,
                "between-period ICC needs a cluster observing two periods");
  return {num0 / den0, num1 / den1};
}

/// Update of alpha0 given a fixed decay factor. At rho = 1 this is also the
/// single-parameter exchangeable update, and the nested-exchangeable update
/// constrained to equal ICCs; all three paths share this very computation so
/// the reduction identities hold bit for bit.
inline double ed_alpha0_given_rho(const std::vector<ClusterWork>& works,
                                  Adjustment adj, double rho) {
  double num = 0.0, den = 0.0;
  for (const ClusterWork& w : works) {
    const Eigen::VectorXd nu = w.nu();
    const Eigen::VectorXd& s = detail::products(w, adj);
    for (std::size_t row = 0; row < w.pairs.size(); ++row) {
      const auto [a, b] = w.pairs[row];
      if (a == b) {
        const double frac = (w.n(a) - 1.0) / w.n(a);
        num += frac * nu(a) * (s(row) - nu(a) / w.n(a));
        den += frac * frac * nu(a) * nu(a);
      } else {
        const int d = std::abs(w.periods[b] - w.periods[a]);
        const double root = std::sqrt(nu(a) * nu(b));
        const double rd = std::pow(rho, d);
        num += 2.0 * s(row) * root * rd;
        den += 2.0 * nu(a) * nu(b) * rd * rd;
      }
    }
  }
  if (den == 0.0)
    throw Error(errc::unidentified_parameter,
                "within-period ICC unidentified: no cluster-period with "
                "n >= 2 and no between-period pair");
  return num / den;
}

/// The decay-factor estimating function: a polynomial in rho whose root in
/// [0, 1] is the update. Written exactly as the ordered double sum, so the
/// off-diagonal terms carry weight two.
inline double ed_rho_equation(const std::vector<ClusterWork>& works,
                              Adjustment adj, double alpha0, double rho) {
  double f = 0.0;
  for (const ClusterWork& w : works) {
    const Eigen::VectorXd nu = w.nu();
    const Eigen::VectorXd& s = detail::products(w, adj);
    for (std::size_t row = 0; row < w.pairs.size(); ++row) {
      const auto [a, b] = w.pairs[row];
      if (a == b) continue;
      const int d = std::abs(w.periods[b] - w.periods[a]);
      const double root = std::sqrt(nu(a) * nu(b));
      // pow(0, 0) = 1 keeps the d = 1 term alive at rho = 0
      f += 2.0 * d * s(row) * root * std::pow(rho, d - 1);
      f -= 2.0 * d * nu(a) * nu(b) * alpha0 * std::pow(rho, 2 * d - 1);
    }
  }
  return f;
}

struct EdUpdate {
  double alpha0 = 0.0;
  double rho = 0.0;
  bool boundary = false;  // no interior root; |equation|-minimizing endpoint
  int iterations = 0;
};

namespace detail {

/// Root of the decay estimating function in [0, 1]: grid scan for sign
/// changes, bracketed root polishing, nearest root to the previous value.
/// Without a sign change the |f|-minimizing endpoint is taken.
inline std::pair<double, bool> ed_solve_rho(
    const std::vector<ClusterWork>& works, Adjustment adj, double alpha0,
    double rho_prev) {
  int maxd = 1;
  for (const ClusterWork& w : works)
    for (const auto& [a, b] : w.pairs)
      if (a != b)
        maxd = std::max(maxd, std::abs(w.periods[b] - w.periods[a]));
  const int degree = std::max(1, 2 * maxd - 1);
  const int grid = std::max(64, 16 * degree);

  const auto f = [&](double r) {
    return ed_rho_equation(works, adj, alpha0, r);
  };

  std::vector<double> roots;
  double prev_x = 0.0, prev_f = f(0.0);
  if (prev_f == 0.0) roots.push_back(0.0);
  for (int k = 1; k <= grid; ++k) {
    const double x = static_cast<double>(k) / grid;
    const double fx = f(x);
    if (fx == 0.0) {
      roots.push_back(x);
    } else if (prev_f != 0.0 && std::signbit(fx) != std::signbit(prev_f)) {
      roots.push_back(
          numeric::brent_zero(f, prev_x, x, prev_f, fx, 1e-14, 200));
    }
    prev_x = x;
    prev_f = fx;
  }

  if (roots.empty()) {
    const double f0 = std::abs(f(0.0)), f1 = std::abs(f(1.0));
    return {f0 <= f1 ? 0.0 : 1.0, true};
  }
  double best = roots.front();
  for (double r : roots)
    if (std::abs(r - rho_prev) < std::abs(best - rho_prev)) best = r;
  return {std::clamp(best, 0.0, 1.0), false};
}

}  // namespace detail

/// Joint exponential-decay update: alternate the alpha0 ratio and the decay
/// root until the pair settles. Ends on an alpha0 refresh so the ratio
/// equation holds exactly at the returned pair.
inline EdUpdate ed_update(const std::vector<ClusterWork>& works, Adjustment adj,
                          double alpha0_prev, double rho_prev) {
  constexpr double kInnerTol = 1e-10;
  constexpr int kInnerCap = 100;
  EdUpdate u;
  u.alpha0 = alpha0_prev;
  u.rho = rho_prev;
  bool settled = false;
  for (int k = 0; k < kInnerCap; ++k) {
    const double a0 = ed_alpha0_given_rho(works, adj, u.rho);
    const auto [rho, boundary] = detail::ed_solve_rho(works, adj, a0, u.rho);
    const double change =
        std::max(std::abs(a0 - u.alpha0), std::abs(rho - u.rho));
    u.alpha0 = a0;
    u.rho = rho;
    u.boundary = boundary;
    u.iterations = k + 1;
    if (change < kInnerTol) {
      settled = true;
      break;
    }
  }
  if (!settled)
    throw Error(errc::non_convergence,
                "decay-parameter update oscillated beyond " +
                    std::to_string(kInnerCap) + " inner iterations");
  u.alpha0 = ed_alpha0_given_rho(works, adj, u.rho);
  return u;
}

/// Stacked correlation estimating-function residual sum D2'(S - eta) at the
/// stored fit, using the products that drove the update.
inline Eigen::VectorXd alpha_score(const FitResult& fit) {
  const int q = fit.alpha.dim();
  Eigen::VectorXd u = Eigen::VectorXd::Zero(q);
  for (const ClusterWork& w : fit.clusters)
    u += w.d2.transpose() *
         (detail::products(w, fit.spec.adjustment) - w.eta);
  return u;
}

namespace detail {

inline int max_observed_size(const TrialData& data) {
  int maxn = 0;
  for (int i = 0; i < data.n_clusters(); ++i)
    for (int j = 0; j < data.n_periods(); ++j)
      maxn = std::max(maxn, data.sizes(i, j));
  return maxn;
}

inline CorrelationParams project_alpha(CorrelationParams a,
                                       const ModelSpec& spec, int max_n,
                                       bool* projected) {
  const auto clip = [&](double v, double lo, double hi) {
    const double c = std::clamp(v, lo, hi);
    if (c != v && projected) *projected = true;
    return c;
  };
  a.alpha0 = clip(a.alpha0, 1e-8, 0.999);
  switch (a.tag) {
    case Structure::independence:
    case Structure::exchangeable:
      break;
    case Structure::nested_exchangeable:
      if (spec.constrain_equal_icc)
        a.alpha1 = a.alpha0;
      else
        a.alpha1 = clip(a.alpha1, -a.alpha0 / (max_n - 1) + 1e-8, a.alpha0);
      break;
    case Structure::exponential_decay:
      if (spec.fixed_rho)
        a.rho = *spec.fixed_rho;
      else
        a.rho = clip(a.rho, 0.0, 1.0);
      break;
  }
  return a;
}

inline Eigen::VectorXd solve_information(const Eigen::MatrixXd& info,
                                         const Eigen::VectorXd& rhs) {
  const Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
  if (ldlt.info() == Eigen::Success) {
    const Eigen::VectorXd x = ldlt.solve(rhs);
    if (x.allFinite()) return x;
  }
  const Eigen::FullPivLU<Eigen::MatrixXd> lu(info);
  if (!lu.isInvertible())
    throw Error(errc::unidentified_parameter,
                "mean-model information is singular");
  return lu.solve(rhs);
}

/// Independence-weighted GLM on the binomial totals: the initializer for the
/// mean parameters.
inline Eigen::VectorXd initial_theta(const TrialData& data, Link link) {
  const int J = data.n_periods();
  const int p = J + 1;
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(p);
  for (int j = 0; j < J; ++j) {
    long y = 0, n = 0;
    for (int i = 0; i < data.n_clusters(); ++i) {
      y += data.totals(i, j);
      n += data.sizes(i, j);
    }
    const double pooled =
        n > 0 ? std::clamp(static_cast<double>(y) / n, 1e-3, 1.0 - 1e-3)
              : 0.5;
    theta(j) = link_of_mean(link, pooled);
  }
  const CorrelationParams ind = CorrelationParams::independence();
  MeanScore ms = mean_score(data, link, theta, ind);
  {
    const Eigen::FullPivLU<Eigen::MatrixXd> lu(ms.info);
    if (!lu.isInvertible())
      throw Error(errc::unidentified_parameter,
                  "design does not identify all mean parameters (constant "
                  "treatment or empty period)");
  }
  for (int it = 0; it < 100; ++it) {
    if (ms.u1.lpNorm<Eigen::Infinity>() < 1e-10) break;
    const Eigen::VectorXd dir = solve_information(ms.info, ms.u1);
    const double base = ms.u1.norm();
    double step = 1.0;
    for (int h = 0; h <= 10; ++h, step *= 0.5) {
      const Eigen::VectorXd cand = theta + step * dir;
      MeanScore cand_ms = mean_score(data, link, cand, ind);
      const double norm = cand_ms.u1.norm();
      if (std::isfinite(norm) && (norm < base || norm < 1e-10)) {
        theta = cand;
        ms = std::move(cand_ms);
        break;
      }
      if (h == 10) return theta;  // stalled; the outer loop takes over
    }
  }
  return theta;
}

inline CorrelationParams initial_alpha(const ModelSpec& spec) {
  switch (spec.structure) {
    case Structure::independence:
      return CorrelationParams::independence();
    case Structure::exchangeable:
      return CorrelationParams::exchangeable(0.01);
    case Structure::nested_exchangeable:
      return CorrelationParams::nested_exchangeable(
          0.01, spec.constrain_equal_icc ? 0.01 : 0.005);
    case Structure::exponential_decay:
      return CorrelationParams::exponential_decay(
          0.01, spec.fixed_rho ? *spec.fixed_rho : 0.5);
  }
  return CorrelationParams::independence();
}

struct AlphaUpdate {
  CorrelationParams value;     // projected
  Eigen::VectorXd raw;         // unprojected solution
  bool projected = false;
  bool boundary = false;
};

inline AlphaUpdate update_alpha(const std::vector<ClusterWork>& works,
                                const ModelSpec& spec,
                                const CorrelationParams& current, int max_n) {
  AlphaUpdate out;
  CorrelationParams next = current;
  switch (spec.structure) {
    case Structure::independence:
      out.raw.resize(0);
      break;
    case Structure::exchangeable: {
      const double a0 = ed_alpha0_given_rho(works, spec.adjustment, 1.0);
      next.alpha0 = a0;
      out.raw = Eigen::VectorXd::Constant(1, a0);
      break;
    }
    case Structure::nested_exchangeable: {
      if (spec.constrain_equal_icc) {
        const double a0 = ed_alpha0_given_rho(works, spec.adjustment, 1.0);
        next.alpha0 = a0;
        next.alpha1 = a0;
        out.raw = Eigen::VectorXd::Constant(2, a0);
      } else {
        const auto [a0, a1] = ne_update(works, spec.adjustment);
        next.alpha0 = a0;
        next.alpha1 = a1;
        out.raw.resize(2);
        out.raw << a0, a1;
      }
      break;
    }
    case Structure::exponential_decay: {
      if (spec.fixed_rho) {
        const double a0 =
            ed_alpha0_given_rho(works, spec.adjustment, *spec.fixed_rho);
        next.alpha0 = a0;
        next.rho = *spec.fixed_rho;
        out.raw.resize(2);
        out.raw << a0, next.rho;
      } else {
        const EdUpdate u =
            ed_update(works, spec.adjustment, current.alpha0, current.rho);
        next.alpha0 = u.alpha0;
        next.rho = u.rho;
        out.boundary = u.boundary;
        out.raw.resize(2);
        out.raw << u.alpha0, u.rho;
      }
      break;
    }
  }
  out.value = project_alpha(next, spec, max_n, &out.projected);
  return out;
}

inline void check_identifiability(const TrialData& data,
                                  const ModelSpec& spec) {
  if (spec.structure == Structure::independence) return;
  bool any_n2 = false, any_two_periods = false;
  for (int i = 0; i < data.n_clusters(); ++i) {
    int observed = 0;
    for (int j = 0; j < data.n_periods(); ++j) {
      if (data.sizes(i, j) >= 2) any_n2 = true;
      if (data.sizes(i, j) >= 1) ++observed;
    }
    if (observed >= 2) any_two_periods = true;
  }
  if (spec.structure == Structure::exchangeable) {
    if (!any_n2 && !any_two_periods)
      throw Error(errc::unidentified_parameter,
                  "exchangeable ICC needs n >= 2 somewhere or a "
                  "multi-period cluster");
    return;
  }
  if (spec.structure == Structure::exponential_decay &&
      data.n_periods() < 2)
    throw Error(errc::unidentified_parameter,
                "J >= 2 required for the exponential-decay structure");
  if (!any_n2)
    throw Error(errc::unidentified_parameter,
                "within-period ICC needs a cluster-period with n >= 2");
  if (!any_two_periods)
    throw Error(errc::unidentified_parameter,
                "between-period parameter needs a cluster observing two "
                "periods");
}

}  // namespace detail

/// Alternating estimation: modified Fisher scoring for the mean parameters
/// (step-halving on the quasi-score norm), closed-form or root-finding
/// correlation updates, leverage refresh, until both blocks settle. The
/// returned per-cluster state is mutually consistent, so the correlation
/// estimating equations evaluate to (numerical) zero at the stored solution.
inline FitResult fit(const TrialData& data, const ModelSpec& spec) {
  if (spec.tolerance <= 0.0 || spec.max_outer_iterations < 1)
    throw Error(errc::invalid_spec,
                "tolerance must be positive and max_outer_iterations >= 1");
  const DesignInfo design = validate_design(data);
  detail::check_identifiability(data, spec);
  const int J = data.n_periods();
  const int p = J + 1;
  const int max_n = detail::max_observed_size(data);

  FitResult out;
  out.spec = spec;
  out.period_labels = data.period_labels;
  out.warnings = design.warnings;

  Eigen::VectorXd theta = detail::initial_theta(data, spec.link);
  CorrelationParams alpha = detail::initial_alpha(spec);

  MeanScore ms = mean_score(data, spec.link, theta, alpha);
  double dtheta = std::numeric_limits<double>::infinity();
  double dalpha = std::numeric_limits<double>::infinity();
  bool alpha_projected = false;
  bool rho_boundary = false;
  Eigen::VectorXd alpha_raw = alpha.vec();

  int it = 0;
  for (it = 1; it <= spec.max_outer_iterations; ++it) {
    if (it > 1 && dtheta < spec.tolerance && dalpha < spec.tolerance &&
        ms.u1.lpNorm<Eigen::Infinity>() <= 1e-6) {
      out.converged = true;
      break;
    }

    // mean step with step-halving on the quasi-score norm
    const Eigen::VectorXd dir = detail::solve_information(ms.info, ms.u1);
    const double base_norm = ms.u1.norm();
    bool accepted = false;
    double step = 1.0;
    Eigen::VectorXd theta_new = theta;
    MeanScore ms_theta = ms;
    for (int h = 0; h <= 10; ++h, step *= 0.5) {
      const Eigen::VectorXd cand = theta + step * dir;
      MeanScore cand_ms;
      try {
        cand_ms = mean_score(data, spec.link, cand, alpha);
      } catch (const Error&) {
        continue;  // infeasible excursion; halve and retry
      }
      const double norm = cand_ms.u1.norm();
      if (std::isfinite(norm) && (norm < base_norm || norm < 1e-10)) {
        theta_new = cand;
        ms_theta = std::move(cand_ms);
        accepted = true;
        break;
      }
    }
    if (!accepted)
      throw Error(errc::non_convergence,
                  "quasi-score norm did not decrease over 10 halvings at "
                  "iteration " +
                      std::to_string(it) +
                      " (norm " + std::to_string(base_norm) + ")");
    dtheta = (theta_new - theta).lpNorm<Eigen::Infinity>();
    theta = theta_new;

    // correlation step at the refreshed mean
    if (alpha.dim() > 0) {
      const std::vector<ClusterWork> works =
          residual_products(data, spec.link, theta, alpha);
      detail::AlphaUpdate up =
          detail::update_alpha(works, spec, alpha, max_n);
      dalpha = (up.value.vec() - alpha.vec()).lpNorm<Eigen::Infinity>();
      alpha = up.value;
      alpha_raw = up.raw;
      alpha_projected = alpha_projected || up.projected;
      rho_boundary = rho_boundary || up.boundary;
      ms = mean_score(data, spec.link, theta, alpha);
    } else {
      dalpha = 0.0;
      ms = std::move(ms_theta);
    }
  }
  out.iterations = std::min(it, spec.max_outer_iterations);
  if (!out.converged)
    out.warnings.push_back("stopped at the outer iteration cap without "
                           "meeting the convergence criteria");

  // Polish: with the mean frozen, drive the correlation block to its fixed
  // point so the stored products, leverage, and parameters agree to well
  // below the reporting tolerances.
  std::vector<ClusterWork> works =
      residual_products(data, spec.link, theta, alpha);
  if (alpha.dim() > 0) {
    for (int k = 0; k < 100; ++k) {
      detail::AlphaUpdate up = detail::update_alpha(works, spec, alpha, max_n);
      const double change =
          (up.value.vec() - alpha.vec()).lpNorm<Eigen::Infinity>();
      alpha = up.value;
      alpha_raw = up.raw;
      alpha_projected = alpha_projected || up.projected;
      rho_boundary = rho_boundary || up.boundary;
      if (change < 1e-13) break;
      works = residual_products(data, spec.link, theta, alpha);
    }
  }

  // Final assembly: covariance pieces at the stored solution. The adjusted
  // products retained below are exactly the ones the last update consumed.
  Eigen::MatrixXd d2_gram =
      Eigen::MatrixXd::Zero(alpha.dim(), alpha.dim());
  bool clamped = false;
  for (ClusterWork& w : works) {
    detail::ClusterModel m = detail::cluster_model(data, w.index, spec.link,
                                                   theta, alpha, &clamped);
    w.v1 = m.cov.v1;
    w.eta = m.cov.eta;
    w.d2 = m.cov.d2;
    d2_gram += w.d2.transpose() * w.d2;
  }
  Eigen::MatrixXd d2_gram_inv;
  if (alpha.dim() > 0) {
    const Eigen::FullPivLU<Eigen::MatrixXd> lu(d2_gram);
    if (!lu.isInvertible())
      throw Error(errc::unidentified_parameter,
                  "correlation-model information is singular");
    d2_gram_inv = lu.inverse();
  }
  for (ClusterWork& w : works) {
    const int npairs = static_cast<int>(w.pairs.size());
    w.h2 = alpha.dim() > 0
               ? Eigen::MatrixXd(w.d2 * d2_gram_inv * w.d2.transpose())
               : Eigen::MatrixXd::Zero(npairs, npairs);
  }

  ms = mean_score(data, spec.link, theta, alpha);
  out.theta = theta;
  out.alpha = alpha;
  out.alpha_raw = alpha_raw;
  out.alpha_projected = alpha_projected;
  out.rho_boundary = rho_boundary;
  out.mu_clamped = clamped;
  out.info = ms.info;
  out.score_norm = ms.u1.lpNorm<Eigen::Infinity>();
  out.clusters = std::move(works);
  if (alpha_projected)
    out.warnings.push_back("correlation update left the feasible region and "
                           "was projected back");
  if (rho_boundary)
    out.warnings.push_back("decay estimating function had no interior root; "
                           "boundary value taken");

  out.mu_hat.setConstant(data.n_clusters(), J,
                         std::numeric_limits<double>::quiet_NaN());
  for (const ClusterWork& w : out.clusters)
    for (std::size_t a = 0; a < w.periods.size(); ++a)
      out.mu_hat(w.index, w.periods[a]) = w.mu(a);
  return out;
}

}  // namespace swgee
