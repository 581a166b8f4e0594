#pragma once

#include <Eigen/Dense>
#include <boost/math/distributions/students_t.hpp>
#include <map>
#include <string>
#include <vector>

#include "swgee/errors.hpp"
#include "swgee/gee.hpp"

namespace swgee {

enum class Correction { bc0, bc1, bc2, bc3 };

inline const char* correction_name(Correction c) {
  switch (c) {
    case Correction::bc0: return "BC0";
    case Correction::bc1: return "BC1";
    case Correction::bc2: return "BC2";
    case Correction::bc3: return "BC3";
  }
  return "?";
}

inline const std::vector<Correction>& all_corrections() {
  static const std::vector<Correction> cs = {Correction::bc0, Correction::bc1,
                                             Correction::bc2, Correction::bc3};
  return cs;
}

struct InferenceOptions {
  /// Use the raw residual cross-products in the meat instead of the
  /// leverage-adjusted ones (strict uncorrected reporting).
  bool lambda_raw_products = false;
  double zeta1 = 0.75;
  double zeta2 = 0.75;
};

namespace detail {

/// Symmetric principal inverse square root of the symmetrized factor,
/// eigenvalues floored away from zero.
inline Eigen::MatrixXd symmetric_inverse_sqrt(const Eigen::MatrixXd& f) {
  const Eigen::MatrixXd s = 0.5 * (f + f.transpose());
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s);
  if (es.info() != Eigen::Success)
    throw Error(errc::numerical_conditioning,
                "eigendecomposition of a leverage factor failed");
  const Eigen::ArrayXd vals = es.eigenvalues().array().max(1e-10);
  return es.eigenvectors() * vals.rsqrt().matrix().asDiagonal() *
         es.eigenvectors().transpose();
}

inline Eigen::MatrixXd plain_inverse(const Eigen::MatrixXd& f,
                                     const std::string& context) {
  const Eigen::FullPivLU<Eigen::MatrixXd> lu(f);
  if (!lu.isInvertible()) throw Error(errc::leverage_degeneracy, context);
  return lu.inverse();
}

}  // namespace detail

/// Model-based covariance of the mean parameters: the inverse accumulated
/// information.
inline Eigen::MatrixXd model_based(const FitResult& fit) {
  const Eigen::FullPivLU<Eigen::MatrixXd> lu(fit.info);
  if (!lu.isInvertible())
    throw Error(errc::unidentified_parameter,
                "mean-model information is singular");
  const Eigen::MatrixXd omega = lu.inverse();
  return 0.5 * (omega + omega.transpose());
}

/// Joint sandwich covariance of (theta-hat, alpha-hat) under one correction.
/// The meat is assembled from per-cluster stacked score contributions, so the
/// result is positive semidefinite by construction.
inline Eigen::MatrixXd sandwich(const FitResult& fit, Correction c,
                                const InferenceOptions& opt = {}) {
  const int p = fit.n_mean_parameters();
  const int q = fit.alpha.dim();
  const Eigen::MatrixXd omega = model_based(fit);

  Eigen::MatrixXd d2_gram = Eigen::MatrixXd::Zero(q, q);
  for (const ClusterWork& w : fit.clusters)
    d2_gram += w.d2.transpose() * w.d2;
  Eigen::MatrixXd pmat(q, q);
  if (q > 0) {
    const Eigen::FullPivLU<Eigen::MatrixXd> lu(d2_gram);
    if (!lu.isInvertible())
      throw Error(errc::unidentified_parameter,
                  "correlation-model information is singular");
    pmat = lu.inverse();
  }

  // d(cross-products)/d(theta), through the fitted means
  Eigen::MatrixXd dsum = Eigen::MatrixXd::Zero(q, p);
  if (q > 0) {
    for (const ClusterWork& w : fit.clusters) {
      const Eigen::VectorXd r = w.residual();
      Eigen::MatrixXd ds(static_cast<int>(w.pairs.size()), p);
      for (std::size_t row = 0; row < w.pairs.size(); ++row) {
        const auto [a, b] = w.pairs[row];
        ds.row(row) = -(w.d1.row(a) * r(b) + r(a) * w.d1.row(b));
      }
      dsum += w.d2.transpose() * ds;
    }
  }
  const Eigen::MatrixXd qmat =
      q > 0 ? Eigen::MatrixXd(pmat * dsum * omega)
            : Eigen::MatrixXd::Zero(0, p);

  Eigen::MatrixXd lambda = Eigen::MatrixXd::Zero(p + q, p + q);
  for (const ClusterWork& w : fit.clusters) {
    const int m = static_cast<int>(w.mu.size());
    const int npairs = static_cast<int>(w.pairs.size());
    const Eigen::VectorXd r = w.residual();
    const Eigen::LLT<Eigen::MatrixXd> llt(w.v1);
    if (llt.info() != Eigen::Success)
      throw Error(errc::infeasible_parameters,
                  "stored working covariance is not positive definite");

    Eigen::VectorXd t;
    const Eigen::MatrixXd f1 = Eigen::MatrixXd::Identity(m, m) - w.h1;
    switch (c) {
      case Correction::bc0:
      case Correction::bc3:
        t = r;
        break;
      case Correction::bc1:
        t = detail::symmetric_inverse_sqrt(f1) * r;
        break;
      case Correction::bc2:
        t = detail::plain_inverse(f1, "mean leverage factor is singular") * r;
        break;
    }
    Eigen::VectorXd a = w.d1.transpose() * llt.solve(t);
    if (c == Correction::bc3) {
      const Eigen::MatrixXd cluster_info =
          w.d1.transpose() * llt.solve(w.d1);
      for (int k = 0; k < p; ++k) {
        const double stat =
            std::min(opt.zeta1, cluster_info(k, k) * omega(k, k));
        a(k) /= std::sqrt(1.0 - stat);
      }
    }

    Eigen::VectorXd z(p + q);
    z.head(p) = a;
    if (q > 0) {
      const Eigen::VectorXd sres =
          (opt.lambda_raw_products ? w.s_raw : w.s_adj) - w.eta;
      Eigen::VectorXd u;
      const Eigen::MatrixXd f2 =
          Eigen::MatrixXd::Identity(npairs, npairs) - w.h2;
      switch (c) {
        case Correction::bc0:
        case Correction::bc3:
          u = sres;
          break;
        case Correction::bc1:
          u = detail::symmetric_inverse_sqrt(f2) * sres;
          break;
        case Correction::bc2:
          u = detail::plain_inverse(
                  f2, "correlation leverage factor is singular") *
              sres;
          break;
      }
      Eigen::VectorXd b = w.d2.transpose() * u;
      if (c == Correction::bc3) {
        const Eigen::MatrixXd d2d2 = w.d2.transpose() * w.d2;
        for (int k = 0; k < q; ++k) {
          const double stat = std::min(opt.zeta2, d2d2(k, k) * pmat(k, k));
          b(k) /= std::sqrt(1.0 - stat);
        }
      }
      z.tail(q) = b;
    }
    lambda += z * z.transpose();
  }

  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(p + q, p + q);
  g.topLeftCorner(p, p) = omega;
  if (q > 0) {
    g.bottomLeftCorner(q, p) = qmat;
    g.bottomRightCorner(q, q) = pmat;
  }
  Eigen::MatrixXd cov = g * lambda * g.transpose();
  cov = 0.5 * (cov + cov.transpose());

  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  if (es.info() == Eigen::Success) {
    const double max_eig = es.eigenvalues().cwiseAbs().maxCoeff();
    if (es.eigenvalues().minCoeff() < -1e-8 * std::max(1.0, max_eig))
      throw Error(errc::numerical_conditioning,
                  std::string(correction_name(c)) +
                      " covariance is not positive semidefinite");
  }
  return cov;
}

struct SandwichSet {
  Eigen::MatrixXd model_based;  // mean parameters only
  std::map<Correction, Eigen::MatrixXd> joint;
  double zeta1 = 0.75;
  double zeta2 = 0.75;
};

inline SandwichSet make_sandwich_set(
    const FitResult& fit,
    const std::vector<Correction>& corrections = all_corrections(),
    const InferenceOptions& opt = {}) {
  SandwichSet set;
  set.model_based = model_based(fit);
  set.zeta1 = opt.zeta1;
  set.zeta2 = opt.zeta2;
  for (Correction c : corrections) set.joint[c] = sandwich(fit, c, opt);
  return set;
}

/// Parameter labels in estimate order: one intercept per period label, the
/// treatment effect, then the correlation parameters when requested.
inline std::vector<std::string> parameter_names(const FitResult& fit,
                                                bool include_alpha) {
  std::vector<std::string> names;
  for (const std::string& label : fit.period_labels)
    names.push_back("beta[" + label + "]");
  names.push_back("delta");
  if (include_alpha && fit.alpha.dim() >= 1) {
    names.push_back("alpha0");
    if (fit.alpha.tag == Structure::nested_exchangeable)
      names.push_back("alpha1");
    if (fit.alpha.tag == Structure::exponential_decay)
      names.push_back("rho");
  }
  return names;
}

struct ParamInterval {
  std::string name;
  double estimate = 0.0;
  double se = 0.0;
  double lower = 0.0;
  double upper = 0.0;
};

struct IntervalReport {
  int dof = 0;
  double confidence = 0.95;
  double t_quantile = 0.0;
  std::vector<ParamInterval> rows;
};

/// t-based confidence intervals with I - 2 degrees of freedom, for as many
/// parameters as the supplied covariance covers (mean block only, or the
/// full joint block).
inline IntervalReport intervals(const FitResult& fit,
                                const Eigen::MatrixXd& cov,
                                double confidence = 0.95) {
  const int n_clusters = static_cast<int>(fit.clusters.size());
  if (n_clusters <= 2)
    throw Error(errc::degrees_of_freedom,
                "t intervals need at least 3 contributing clusters");
  if (!(confidence > 0.0 && confidence < 1.0))
    throw Error(errc::invalid_spec, "confidence must lie in (0, 1)");
  const int p = fit.n_mean_parameters();
  const int q = fit.alpha.dim();
  if (cov.rows() != p && cov.rows() != p + q)
    throw Error(errc::input, "covariance size matches neither the mean "
                             "block nor the joint block");

  IntervalReport rep;
  rep.dof = n_clusters - 2;
  rep.confidence = confidence;
  const boost::math::students_t_distribution<double> dist(rep.dof);
  rep.t_quantile = boost::math::quantile(dist, 0.5 * (1.0 + confidence));

  Eigen::VectorXd estimates(cov.rows());
  estimates.head(p) = fit.theta;
  if (cov.rows() == p + q) estimates.tail(q) = fit.alpha.vec();
  const std::vector<std::string> names =
      parameter_names(fit, cov.rows() == p + q);

  for (int k = 0; k < cov.rows(); ++k) {
    ParamInterval row;
    row.name = names[k];
    row.estimate = estimates(k);
    row.se = std::sqrt(std::max(0.0, cov(k, k)));
    row.lower = row.estimate - rep.t_quantile * row.se;
    row.upper = row.estimate + rep.t_quantile * row.se;
    rep.rows.push_back(std::move(row));
  }
  return rep;
}

/// Correlation-structure information criterion on the cluster-period scale:
/// trace of (independence-weighted information) x Omega x meat x Omega.
/// The meat defaults to the leverage-square-root-corrected one.
inline double cic_cp(const FitResult& fit, bool bc0_meat = false) {
  const int p = fit.n_mean_parameters();
  const Eigen::MatrixXd omega = model_based(fit);
  Eigen::MatrixXd tmat = Eigen::MatrixXd::Zero(p, p);
  Eigen::MatrixXd lam11 = Eigen::MatrixXd::Zero(p, p);
  for (const ClusterWork& w : fit.clusters) {
    const int m = static_cast<int>(w.mu.size());
    const Eigen::VectorXd nu = w.nu();
    Eigen::VectorXd psi_inv(m);
    for (int a = 0; a < m; ++a)
      psi_inv(a) = static_cast<double>(w.n(a)) / nu(a);
    tmat += w.d1.transpose() * psi_inv.asDiagonal() * w.d1;

    const Eigen::LLT<Eigen::MatrixXd> llt(w.v1);
    if (llt.info() != Eigen::Success)
      throw Error(errc::infeasible_parameters,
                  "stored working covariance is not positive definite");
    Eigen::VectorXd t = w.residual();
    if (!bc0_meat) {
      const Eigen::MatrixXd f1 = Eigen::MatrixXd::Identity(m, m) - w.h1;
      t = detail::symmetric_inverse_sqrt(f1) * t;
    }
    const Eigen::VectorXd a = w.d1.transpose() * llt.solve(t);
    lam11 += a * a.transpose();
  }
  return (tmat * omega * lam11 * omega).trace();
}

}  // namespace swgee
