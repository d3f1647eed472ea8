#pragma once

// Special functions and the F / t distribution functions used by the
// moment formulas and p-value computations. Infinite denominator degrees of
// freedom are accepted everywhere and select the chi-square/d1 (or normal)
// limit law.

#include <cmath>
#include <limits>

#include <boost/math/special_functions/beta.hpp>
#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/gamma.hpp>
#include <boost/math/special_functions/polygamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>

#include "errors.hpp"

namespace rebayes {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

namespace detail {

namespace bmp = boost::math::policies;
using MathPolicy = bmp::policy<bmp::promote_double<false>,
                               bmp::overflow_error<bmp::ignore_error>,
                               bmp::underflow_error<bmp::ignore_error>>;

inline void check_df(double d1, double d2) {
    require_domain(std::isfinite(d1) && d1 > 0.0, "first degrees of freedom must be finite and positive");
    require_domain(!std::isnan(d2) && d2 > 0.0, "second degrees of freedom must be positive");
}

inline void check_probability(double p) {
    require_domain(p > 0.0 && p < 1.0, "probability must lie strictly between 0 and 1");
}

// u = d1 x / (d1 x + d2) and its complement, each computed without cancellation.
struct BetaArgument {
    double u;
    double v;
};

inline BetaArgument beta_argument(double x, double d1, double d2) {
    const double num = d1 * x;
    const double den = num + d2;
    return {num / den, d2 / den};
}

}  // namespace detail

inline double digamma(double x) {
    detail::require_domain(std::isfinite(x) && x > 0.0, "digamma: argument must be finite and positive");
    return boost::math::digamma(x, detail::MathPolicy{});
}

inline double trigamma(double x) {
    detail::require_domain(std::isfinite(x) && x > 0.0, "trigamma: argument must be finite and positive");
    return boost::math::trigamma(x, detail::MathPolicy{});
}

/// Second derivative of log-gamma, psi''(x).
inline double tetragamma(double x) {
    detail::require_domain(std::isfinite(x) && x > 0.0, "tetragamma: argument must be finite and positive");
    return boost::math::polygamma(2, x, detail::MathPolicy{});
}

/// Solves trigamma(x) = y for x > 0.
///
/// Newton iteration on 1/x started from 0.5 + 1/y, where trigamma(x) is
/// close to linear. For y > 1e7 the asymptote 1/sqrt(y) is returned and for
/// y < 1e-6 the expansion 1/y + 1/2 (relative error O(y^2)). Returns +inf
/// only when 1/y overflows.
inline double trigamma_inverse(double y) {
    detail::require_domain(!std::isnan(y) && y > 0.0, "trigamma_inverse: argument must be positive");
    if (std::isinf(y)) return 0.0;
    if (y > 1e7) return 1.0 / std::sqrt(y);
    if (y < 1e-6) {
        const double inv = 1.0 / y;
        return std::isfinite(inv) ? inv + 0.5 : kInf;
    }
    double x = 0.5 + 1.0 / y;
    for (int iter = 0; iter < 50; ++iter) {
        const double tri = trigamma(x);
        const double step = tri * (1.0 - tri / y) / tetragamma(x);
        x += step;
        if (std::fabs(step) / x < 1e-12) break;
    }
    return x;
}

/// P(F <= x) for F ~ F(d1, d2); d2 may be +inf.
inline double f_cdf(double x, double d1, double d2) {
    detail::check_df(d1, d2);
    detail::require_domain(!std::isnan(x) && x >= 0.0, "f_cdf: x must be nonnegative");
    if (x == 0.0) return 0.0;
    if (std::isinf(x)) return 1.0;
    const double a = 0.5 * d1;
    if (std::isinf(d2)) return boost::math::gamma_p(a, a * x, detail::MathPolicy{});
    const double b = 0.5 * d2;
    const auto [u, v] = detail::beta_argument(x, d1, d2);
    return u < v ? boost::math::ibeta(a, b, u, detail::MathPolicy{})
                 : boost::math::ibetac(b, a, v, detail::MathPolicy{});
}

/// P(F > x), computed directly in the upper tail.
inline double f_sf(double x, double d1, double d2) {
    detail::check_df(d1, d2);
    detail::require_domain(!std::isnan(x) && x >= 0.0, "f_sf: x must be nonnegative");
    if (x == 0.0) return 1.0;
    if (std::isinf(x)) return 0.0;
    const double a = 0.5 * d1;
    if (std::isinf(d2)) return boost::math::gamma_q(a, a * x, detail::MathPolicy{});
    const double b = 0.5 * d2;
    const auto [u, v] = detail::beta_argument(x, d1, d2);
    return u < v ? boost::math::ibetac(a, b, u, detail::MathPolicy{})
                 : boost::math::ibeta(b, a, v, detail::MathPolicy{});
}

inline double f_pdf(double x, double d1, double d2) {
    detail::check_df(d1, d2);
    detail::require_domain(!std::isnan(x) && x >= 0.0, "f_pdf: x must be nonnegative");
    if (std::isinf(x)) return 0.0;
    const double a = 0.5 * d1;
    if (x == 0.0) {
        if (d1 < 2.0) return kInf;
        if (d1 > 2.0) return 0.0;
    }
    if (std::isinf(d2)) return a * boost::math::gamma_p_derivative(a, a * x, detail::MathPolicy{});
    const double b = 0.5 * d2;
    const auto [u, v] = detail::beta_argument(x, d1, d2);
    // du/dx = d1 d2 / (d1 x + d2)^2 = (d1 / d2) v^2
    return boost::math::ibeta_derivative(a, b, u, detail::MathPolicy{}) * (d1 / d2) * v * v;
}

/// Density of log(F) at t, i.e. x * f_pdf(x) with x = exp(t).
inline double log_f_variate_pdf(double t, double d1, double d2) {
    detail::check_df(d1, d2);
    if (std::isnan(t)) throw DomainError("log_f_variate_pdf: t is NaN");
    const double a = 0.5 * d1;
    if (std::isinf(d2)) {
        const double w = a * std::exp(t);
        if (w == 0.0 || !std::isfinite(w)) return 0.0;
        return w * boost::math::gamma_p_derivative(a, w, detail::MathPolicy{});
    }
    const double b = 0.5 * d2;
    const double shift = t + std::log(d1 / d2);
    const double u = 1.0 / (1.0 + std::exp(-shift));
    const double v = 1.0 / (1.0 + std::exp(shift));
    if (u == 0.0 || v == 0.0) return 0.0;
    // Evaluate at whichever of u, v is accurate; Beta(a, b) at u is Beta(b, a) at v.
    const double dens = shift > 0.0 ? boost::math::ibeta_derivative(b, a, v, detail::MathPolicy{})
                                    : boost::math::ibeta_derivative(a, b, u, detail::MathPolicy{});
    return dens * u * v;
}

namespace detail {

// log of the F quantile at lower-tail probability p (upper = false) or
// upper-tail probability p (upper = true). Working on the log scale keeps
// extreme upper quantiles of heavy-tailed laws representable.
inline double f_log_quantile(double p, double d1, double d2, bool upper) {
    const double a = 0.5 * d1;
    if (std::isinf(d2)) {
        const double g = upper ? boost::math::gamma_q_inv(a, p, MathPolicy{})
                               : boost::math::gamma_p_inv(a, p, MathPolicy{});
        return std::log(g) - std::log(a);
    }
    const double b = 0.5 * d2;
    double v = 0.0;
    const double u = upper ? boost::math::ibetac_inv(a, b, p, &v, MathPolicy{})
                           : boost::math::ibeta_inv(a, b, p, &v, MathPolicy{});
    return std::log(d2 / d1) + std::log(u) - std::log(v);
}

}  // namespace detail

/// Smallest x with f_cdf(x, d1, d2) >= p.
inline double f_quantile(double p, double d1, double d2) {
    detail::check_df(d1, d2);
    detail::check_probability(p);
    return std::exp(detail::f_log_quantile(p, d1, d2, false));
}

/// x with f_sf(x, d1, d2) = q, computed in the upper tail.
inline double f_quantile_upper(double q, double d1, double d2) {
    detail::check_df(d1, d2);
    detail::check_probability(q);
    return std::exp(detail::f_log_quantile(q, d1, d2, true));
}

/// Two-sided tail probability P(|T| >= |x|) for Student's t on df degrees of
/// freedom; df = +inf gives the standard normal.
inline double t_tail2(double x, double df) {
    detail::require_domain(!std::isnan(df) && df > 0.0, "t_tail2: degrees of freedom must be positive");
    detail::require_domain(!std::isnan(x), "t_tail2: statistic is NaN");
    if (x == 0.0) return 1.0;
    if (std::isinf(x)) return 0.0;
    if (std::isinf(df)) return std::erfc(std::fabs(x) / std::sqrt(2.0));
    const double x2 = x * x;
    const double den = df + x2;
    if (x2 < df) return boost::math::ibetac(0.5, 0.5 * df, x2 / den, detail::MathPolicy{});
    return boost::math::ibeta(0.5 * df, 0.5, df / den, detail::MathPolicy{});
}

}  // namespace rebayes
