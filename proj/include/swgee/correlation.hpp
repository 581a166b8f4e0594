#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdlib>
#include <string>
#include <utility>
#include <vector>

#include "swgee/errors.hpp"

namespace swgee {

enum class Structure {
  independence,
  exchangeable,
  nested_exchangeable,
  exponential_decay,
};

inline const char* structure_name(Structure s) {
  switch (s) {
    case Structure::independence: return "independence";
    case Structure::exchangeable: return "exchangeable";
    case Structure::nested_exchangeable: return "nested-exchangeable";
    case Structure::exponential_decay: return "exponential-decay";
  }
  return "?";
}

/// Intraclass correlation parameters. alpha0 is the within-period ICC;
/// alpha1 applies to nested-exchangeable, rho to exponential-decay.
/// Exchangeable behaves as nested-exchangeable with alpha1 = alpha0 and as
/// exponential-decay with rho = 1.
struct CorrelationParams {
  Structure tag = Structure::independence;
  double alpha0 = 0.0;
  double alpha1 = 0.0;
  double rho = 0.0;

  static CorrelationParams independence() { return {}; }

  static CorrelationParams exchangeable(double a0) {
    CorrelationParams p;
    p.tag = Structure::exchangeable;
    p.alpha0 = a0;
    return p;
  }

  static CorrelationParams nested_exchangeable(double a0, double a1) {
    CorrelationParams p;
    p.tag = Structure::nested_exchangeable;
    p.alpha0 = a0;
    p.alpha1 = a1;
    return p;
  }

  static CorrelationParams exponential_decay(double a0, double r) {
    if (r < 0.0 || r > 1.0)
      throw Error(errc::invalid_spec,
                  "decay factor must lie in [0, 1], got " + std::to_string(r));
    CorrelationParams p;
    p.tag = Structure::exponential_decay;
    p.alpha0 = a0;
    p.rho = r;
    return p;
  }

  /// Number of free correlation parameters.
  int dim() const {
    switch (tag) {
      case Structure::independence: return 0;
      case Structure::exchangeable: return 1;
      case Structure::nested_exchangeable: return 2;
      case Structure::exponential_decay: return 2;
    }
    return 0;
  }

  /// Correlation between two *distinct* individuals in (global) periods
  /// j and l of the same cluster.
  double pair_correlation(int j, int l) const {
    switch (tag) {
      case Structure::independence:
        return 0.0;
      case Structure::exchangeable:
        return alpha0;
      case Structure::nested_exchangeable:
        return j == l ? alpha0 : alpha1;
      case Structure::exponential_decay:
        return j == l ? alpha0 : alpha0 * std::pow(rho, std::abs(j - l));
    }
    return 0.0;
  }

  /// Free parameters as a vector, in the order (alpha0[, alpha1 | rho]).
  Eigen::VectorXd vec() const {
    Eigen::VectorXd v(dim());
    if (dim() >= 1) v(0) = alpha0;
    if (tag == Structure::nested_exchangeable) v(1) = alpha1;
    if (tag == Structure::exponential_decay) v(1) = rho;
    return v;
  }

  void assign(const Eigen::VectorXd& v) {
    if (v.size() != dim())
      throw Error(errc::invalid_spec, "parameter vector length mismatch");
    if (dim() >= 1) alpha0 = v(0);
    if (tag == Structure::nested_exchangeable) alpha1 = v(1);
    if (tag == Structure::exponential_decay) rho = v(1);
  }
};

/// Covariance of the cluster-period mean vector for one cluster, together
/// with the pieces the correlation estimating equations need. `pairs` holds
/// local indices (a, b), a <= b, into the observed-period list, row-major;
/// eta and d2 rows follow the same ordering.
struct ClusterCovariance {
  Eigen::MatrixXd v1;
  Eigen::VectorXd eta;
  Eigen::MatrixXd d2;
  std::vector<std::pair<int, int>> pairs;
};

namespace detail {

inline void check_moments(const Eigen::VectorXd& mu, const Eigen::VectorXi& n) {
  for (Eigen::Index a = 0; a < mu.size(); ++a) {
    if (!(mu(a) > 0.0 && mu(a) < 1.0))
      throw Error(errc::variance_degeneracy,
                  "mean at or beyond {0,1}: mu = " + std::to_string(mu(a)));
    if (n(a) < 1)
      throw Error(errc::input, "observed period requires n >= 1");
  }
}

inline ClusterCovariance build_covariance(const Eigen::VectorXd& mu,
                                          const Eigen::VectorXi& n,
                                          const std::vector<int>& periods,
                                          const CorrelationParams& params,
                                          bool check_pd) {
  const int m = static_cast<int>(mu.size());
  if (n.size() != m || static_cast<int>(periods.size()) != m)
    throw Error(errc::input, "mu, sizes, periods must have equal length");
  check_moments(mu, n);

  Eigen::VectorXd nu(m);
  for (int a = 0; a < m; ++a) nu(a) = mu(a) * (1.0 - mu(a));

  const int q = params.dim();
  ClusterCovariance out;
  out.v1.setZero(m, m);
  out.eta.setZero(m * (m + 1) / 2);
  out.d2.setZero(m * (m + 1) / 2, q);
  out.pairs.reserve(m * (m + 1) / 2);

  int row = 0;
  for (int a = 0; a < m; ++a) {
    for (int b = a; b < m; ++b, ++row) {
      out.pairs.emplace_back(a, b);
      double sigma = 0.0;
      if (a == b) {
        // variance of a mean of n exchangeable binaries: design effect
        sigma = nu(a) / n(a) * (1.0 + (n(a) - 1) * params.alpha0);
        if (q >= 1) out.d2(row, 0) = nu(a) * (n(a) - 1) / n(a);
      } else {
        const double root = std::sqrt(nu(a) * nu(b));
        const int d = std::abs(periods[b] - periods[a]);
        switch (params.tag) {
          case Structure::independence:
            break;
          case Structure::exchangeable:
            sigma = root * params.alpha0;
            out.d2(row, 0) = root;
            break;
          case Structure::nested_exchangeable:
            sigma = root * params.alpha1;
            out.d2(row, 1) = root;
            break;
          case Structure::exponential_decay: {
            const double rd = std::pow(params.rho, d);
            sigma = root * params.alpha0 * rd;
            out.d2(row, 0) = root * rd;
            // pow(0, 0) = 1 makes the d == 1 derivative come out right
            // at rho = 0; d >= 2 terms vanish there.
            out.d2(row, 1) = root * params.alpha0 * d * std::pow(params.rho, d - 1);
            break;
          }
        }
      }
      out.eta(row) = sigma;
      out.v1(a, b) = sigma;
      out.v1(b, a) = sigma;
    }
  }

  if (check_pd && m > 0) {
    const Eigen::LLT<Eigen::MatrixXd> llt(out.v1);
    if (llt.info() != Eigen::Success)
      throw Error(errc::infeasible_parameters,
                  std::string("cluster-period covariance not positive "
                              "definite under ") +
                      structure_name(params.tag));
  }
  return out;
}

}  // namespace detail

/// Covariance of the cluster-period means, its stacked distinct entries, and
/// their parameter Jacobian. `periods` carries the global period indices so
/// decay distances respect gaps left by unobserved periods.
inline ClusterCovariance induced_covariance(const Eigen::VectorXd& mu,
                                            const Eigen::VectorXi& n,
                                            const std::vector<int>& periods,
                                            const CorrelationParams& params) {
  return detail::build_covariance(mu, n, periods, params, /*check_pd=*/true);
}

/// Jacobian d(eta)/d(params) only, without the positive-definiteness check.
inline Eigen::MatrixXd covariance_jacobian(const Eigen::VectorXd& mu,
                                           const Eigen::VectorXi& n,
                                           const std::vector<int>& periods,
                                           const CorrelationParams& params) {
  return detail::build_covariance(mu, n, periods, params, /*check_pd=*/false)
      .d2;
}

/// Limiting correlation of two cluster-period means as the period sizes grow.
inline double limit_correlation(const CorrelationParams& params, int j, int l) {
  if (j == l) return 1.0;
  if (params.alpha0 <= 0.0)
    throw Error(errc::undefined_limit,
                "limiting correlation needs alpha0 > 0");
  switch (params.tag) {
    case Structure::independence:
      return 0.0;  // unreachable: alpha0 is 0 by construction
    case Structure::exchangeable:
      return 1.0;
    case Structure::nested_exchangeable:
      return params.alpha1 / params.alpha0;
    case Structure::exponential_decay:
      return std::pow(params.rho, std::abs(j - l));
  }
  return 0.0;
}

/// Individual-level expansion of one cluster: mean-model Jacobian rows
/// repeated per member, the block covariance of the member outcomes, and the
/// stacked member means. Exists to cross-check the cluster-period quasi-score
/// against its individual-level counterpart on small instances.
struct IndividualExpansion {
  Eigen::MatrixXd e1;
  Eigen::MatrixXd m1;
  Eigen::VectorXd vartheta;
};

inline IndividualExpansion expand_individual(const Eigen::VectorXd& mu,
                                             const Eigen::VectorXi& n,
                                             const std::vector<int>& periods,
                                             const CorrelationParams& params,
                                             const Eigen::MatrixXd& d1) {
  const int m = static_cast<int>(mu.size());
  if (n.size() != m || static_cast<int>(periods.size()) != m ||
      d1.rows() != m)
    throw Error(errc::input, "mu, sizes, periods, d1 must agree in length");
  detail::check_moments(mu, n);
  const long total = n.cast<long>().sum();
  if (total > 2000)
    throw Error(errc::oracle_scale,
                "individual expansion capped at 2000 members, got " +
                    std::to_string(total));

  const int N = static_cast<int>(total);
  IndividualExpansion out;
  out.e1.setZero(N, d1.cols());
  out.m1.setZero(N, N);
  out.vartheta.setZero(N);

  std::vector<int> offset(m + 1, 0);
  for (int a = 0; a < m; ++a) offset[a + 1] = offset[a] + n(a);

  Eigen::VectorXd nu(m);
  for (int a = 0; a < m; ++a) nu(a) = mu(a) * (1.0 - mu(a));

  for (int a = 0; a < m; ++a) {
    for (int u = 0; u < n(a); ++u) {
      out.e1.row(offset[a] + u) = d1.row(a);
      out.vartheta(offset[a] + u) = mu(a);
    }
    for (int b = a; b < m; ++b) {
      const double root = std::sqrt(nu(a) * nu(b));
      const double c =
          root * params.pair_correlation(periods[a], periods[b]);
      for (int u = 0; u < n(a); ++u)
        for (int v = (a == b ? u : 0); v < n(b); ++v) {
          const int r = offset[a] + u, s = offset[b] + v;
          const double value = (r == s) ? nu(a) : c;
          out.m1(r, s) = value;
          out.m1(s, r) = value;
        }
    }
  }
  return out;
}

}  // namespace swgee
