#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string_view>
#include <utility>

#include "swgee/errors.hpp"

namespace swgee::numeric {

/// Brent-style zero finder on a bracketing interval [a, b] with f(a)*f(b) <= 0.
/// Combines bisection with inverse quadratic interpolation; terminates when
/// the bracket shrinks below xtol plus machine slack.
template <class F>
double brent_zero(F&& f, double a, double b, double fa, double fb,
                  double xtol = 1e-14, int max_iter = 200) {
  if (fa == 0.0) return a;
  if (fb == 0.0) return b;
  if ((fa > 0.0) == (fb > 0.0))
    throw Error(errc::input, "brent_zero requires a sign change bracket");
  double c = a, fc = fa;
  double d = b - a, e = d;
  const double eps = std::numeric_limits<double>::epsilon();
  for (int it = 0; it < max_iter; ++it) {
    if ((fb > 0.0) == (fc > 0.0)) {
      c = a;
      fc = fa;
      d = b - a;
      e = d;
    }
    if (std::fabs(fc) < std::fabs(fb)) {
      a = b;
      b = c;
      c = a;
      fa = fb;
      fb = fc;
      fc = fa;
    }
    const double xm = 0.5 * (c - b);
    const double tol1 = 2.0 * eps * std::fabs(b) + 0.5 * xtol;
    if (std::fabs(xm) <= tol1 || fb == 0.0) break;
    if (std::fabs(e) < tol1 || std::fabs(fa) <= std::fabs(fb)) {
      d = xm;
      e = d;
    } else {
      double p, q;
      const double s = fb / fa;
      if (a != c) {
        const double qq = fa / fc;
        const double r = fb / fc;
        p = s * (2.0 * xm * qq * (qq - r) - (b - a) * (r - 1.0));
        q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
      } else {
        p = 2.0 * xm * s;
        q = 1.0 - s;
      }
      if (p > 0.0) q = -q;
      p = std::fabs(p);
      if (2.0 * p < 3.0 * xm * q - std::fabs(tol1 * q) &&
          p < std::fabs(0.5 * e * q)) {
        e = d;
        d = p / q;
      } else {
        d = xm;
        e = d;
      }
    }
    a = b;
    fa = fb;
    b += (std::fabs(d) > tol1) ? d : std::copysign(tol1, xm);
    fb = f(b);
  }
  return b;
}

template <class F>
double brent_zero(F&& f, double a, double b, double xtol = 1e-14) {
  const double fa = f(a), fb = f(b);
  return brent_zero(std::forward<F>(f), a, b, fa, fb, xtol);
}

/// FNV-1a 64-bit digest; identifies input files in run manifests.
inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001B3ull;
  }
  return h;
}

/// Type-7 (linear interpolation) sample quantile of a sorted vector.
inline double quantile_sorted(const double* sorted, std::size_t n, double p) {
  if (n == 0) return std::numeric_limits<double>::quiet_NaN();
  if (n == 1) return sorted[0];
  const double h = p * static_cast<double>(n - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= n) return sorted[n - 1];
  const double w = h - static_cast<double>(lo);
  return sorted[lo] * (1.0 - w) + sorted[lo + 1] * w;
}

}  // namespace swgee::numeric
