#pragma once

// Estimation of the scaled inverse chi-square prior on genewise variances:
// ordinary moment matching on log variances, the robust Winsorized variant,
// and gene-specific prior degrees of freedom for hypervariable genes.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "errors.hpp"
#include "linear_model.hpp"
#include "lowess.hpp"
#include "quadrature.hpp"
#include "specfun.hpp"

namespace rebayes {

/// Prior hyperparameters together with the gene-specific prior degrees of
/// freedom. All vectors have one entry per gene.
struct Hyperprior {
    double d0 = kInf;
    /// Location estimated from the (detrended) variances.
    double s02_scale = 1.0;
    /// Per-gene prior location s0g^2; constant unless a trend was fitted.
    std::vector<double> s02;
    /// Per-gene prior degrees of freedom, in [d_outlier, d0].
    std::vector<double> d0g;
    double d_outlier = kInf;
    /// Probability that each gene is not a hypervariable outlier.
    std::vector<double> pi;
    bool trend_enabled = false;

    std::size_t size() const { return s02.size(); }

    /// Number of genes assigned fewer prior degrees of freedom than d0.
    std::size_t n_outliers() const {
        return static_cast<std::size_t>(std::count_if(d0g.begin(), d0g.end(), [&](double d) { return d < d0; }));
    }
};

/// Result of ordinary moment estimation.
struct FDistFit {
    double d0 = kInf;
    double s02 = 1.0;
    /// Per-gene prior location when a covariate trend was fitted, else empty.
    std::vector<double> s02_trend;
};

/// Per-gene inputs to hyperparameter estimation extracted from the fits.
/// Absent variances are NaN and unusable genes have df = 0.
struct PriorInputs {
    std::vector<double> s2;
    std::vector<double> df;
    std::vector<double> avg_expr;
};

inline PriorInputs prior_inputs(std::span<const GeneFit> fits) {
    PriorInputs in;
    in.s2.reserve(fits.size());
    in.df.reserve(fits.size());
    in.avg_expr.reserve(fits.size());
    for (const auto& f : fits) {
        const bool ok = f.usable && f.s2.has_value();
        in.s2.push_back(ok ? *f.s2 : std::numeric_limits<double>::quiet_NaN());
        in.df.push_back(ok ? f.df_residual : 0.0);
        in.avg_expr.push_back(f.avg_expr);
    }
    return in;
}

struct TrendOptions {
    double span = 0.4;
};

/// Smooth of z against a covariate by lowess. Returns the mean of z for
/// fewer than 50 points or a constant covariate.
inline std::vector<double> fit_trend(std::span<const double> z, std::span<const double> covariate, bool robust,
                                     const TrendOptions& opt = {}) {
    if (z.size() != covariate.size()) throw DataError("fit_trend: z and covariate lengths differ");
    const std::size_t n = z.size();
    if (n == 0) return {};
    const auto [mn, mx] = std::minmax_element(covariate.begin(), covariate.end());
    if (n < 50 || *mn == *mx) {
        const double mean = std::accumulate(z.begin(), z.end(), 0.0) / static_cast<double>(n);
        return std::vector<double>(n, mean);
    }
    return lowess(covariate, z, LowessOptions{opt.span, robust ? 3 : 0});
}

namespace detail {

inline bool usable_variance(double s2, double df) { return df > 0.0 && std::isfinite(s2) && s2 >= 0.0; }

inline std::vector<std::size_t> usable_indices(std::span<const double> s2, std::span<const double> df) {
    if (s2.size() != df.size()) throw DataError("variance and degrees-of-freedom vectors differ in length");
    std::vector<std::size_t> idx;
    for (std::size_t g = 0; g < s2.size(); ++g)
        if (usable_variance(s2[g], df[g])) idx.push_back(g);
    if (idx.size() < 2) throw DataError("need at least 2 genes with residual degrees of freedom");
    return idx;
}

// Floors variances at 1e-5 times their median so they can be logged.
inline std::vector<double> floored(std::span<const double> x) {
    const double m = median_of(std::vector<double>(x.begin(), x.end()));
    double floor = 1e-5 * m;
    if (!(floor > 0.0)) {
        double smallest = kInf;
        for (double v : x)
            if (v > 0.0) smallest = std::min(smallest, v);
        if (!std::isfinite(smallest)) throw DataError("all residual variances are zero");
        floor = smallest;
    }
    std::vector<double> out(x.begin(), x.end());
    for (double& v : out) v = std::max(v, floor);
    return out;
}

inline double mean_of(std::span<const double> x) {
    return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

inline double sample_variance(std::span<const double> x, double centre) {
    double ss = 0.0;
    for (double v : x) ss += (v - centre) * (v - centre);
    return ss / static_cast<double>(x.size() - 1);
}

template <typename T>
std::vector<T> gather(std::span<const T> x, const std::vector<std::size_t>& idx) {
    std::vector<T> out;
    out.reserve(idx.size());
    for (std::size_t g : idx) out.push_back(x[g]);
    return out;
}

// Trend values for every gene: fitted values for genes used in the fit,
// interpolated along the fitted curve for the rest.
inline std::vector<double> spread_trend(std::span<const double> covariate, const std::vector<std::size_t>& idx,
                                        const std::vector<double>& fitted) {
    const std::size_t G = covariate.size();
    std::vector<double> out(G, std::numeric_limits<double>::quiet_NaN());
    const std::vector<double> used_cov = gather(covariate, idx);
    const std::vector<double> all = interpolate_curve(used_cov, fitted, covariate);
    const double fallback = mean_of(fitted);
    for (std::size_t g = 0; g < G; ++g) out[g] = std::isfinite(covariate[g]) ? all[g] : fallback;
    for (std::size_t k = 0; k < idx.size(); ++k) out[idx[k]] = fitted[k];
    return out;
}

// Brent's root finder on [a, b] with f(a), f(b) of opposite sign.
template <typename F>
double brent_root(F&& f, double a, double b, double fa, double fb, double xtol, double ftol, int max_iter = 200) {
    double c = a, fc = fa, d = b - a, e = d;
    for (int iter = 0; iter < max_iter; ++iter) {
        if ((fb > 0.0) == (fc > 0.0)) {
            c = a;
            fc = fa;
            d = e = b - a;
        }
        if (std::fabs(fc) < std::fabs(fb)) {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        const double tol = 2.0 * std::numeric_limits<double>::epsilon() * std::fabs(b) + 0.5 * xtol;
        const double m = 0.5 * (c - b);
        if (std::fabs(m) <= tol || std::fabs(fb) <= ftol) return b;
        if (std::fabs(e) >= tol && std::fabs(fa) > std::fabs(fb)) {
            double p, q;
            const double s = fb / fa;
            if (a == c) {
                p = 2.0 * m * s;
                q = 1.0 - s;
            } else {
                const double qq = fa / fc;
                const double r = fb / fc;
                p = s * (2.0 * m * qq * (qq - r) - (b - a) * (r - 1.0));
                q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if (p > 0.0) q = -q;
            p = std::fabs(p);
            if (2.0 * p < std::min(3.0 * m * q - std::fabs(tol * q), std::fabs(e * q))) {
                e = d;
                d = p / q;
            } else {
                d = m;
                e = m;
            }
        } else {
            d = m;
            e = m;
        }
        a = b;
        fa = fb;
        b += std::fabs(d) > tol ? d : (m > 0.0 ? tol : -tol);
        fb = f(b);
    }
    return b;
}

}  // namespace detail

/// Ordinary moment estimation of (d0, s0^2) from log variances.
///
/// Genes with df <= 0 or absent variances are ignored. With a covariate, the
/// location is a lowess trend of log s2 - digamma(df/2) + log(df/2) and the
/// per-gene prior locations are returned in s02_trend.
inline FDistFit fit_fdist(std::span<const double> s2, std::span<const double> df,
                          std::optional<std::span<const double>> covariate = std::nullopt,
                          const TrendOptions& trend = {}) {
    const auto idx = detail::usable_indices(s2, df);
    if (covariate && covariate->size() != s2.size()) throw DataError("covariate length does not match variances");
    const std::size_t n = idx.size();
    const std::vector<double> x = detail::floored(detail::gather(s2, idx));

    std::vector<double> e(n);
    double mean_trigamma = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        const double half = 0.5 * df[idx[k]];
        e[k] = std::log(x[k]) - digamma(half) + std::log(half);
        mean_trigamma += trigamma(half);
    }
    mean_trigamma /= static_cast<double>(n);

    std::vector<double> location;
    double evar;
    if (covariate) {
        location = fit_trend(e, detail::gather(*covariate, idx), false, trend);
        double ss = 0.0;
        for (std::size_t k = 0; k < n; ++k) ss += (e[k] - location[k]) * (e[k] - location[k]);
        evar = ss / static_cast<double>(n - 1);
    } else {
        const double emean = detail::mean_of(e);
        location.assign(n, emean);
        evar = detail::sample_variance(e, emean);
    }
    evar -= mean_trigamma;

    FDistFit fit;
    double shift = 0.0;  // digamma(d0/2) - log(d0/2), zero in the d0 = inf limit
    if (evar > 0.0) {
        fit.d0 = 2.0 * trigamma_inverse(evar);
        if (std::isfinite(fit.d0)) shift = digamma(0.5 * fit.d0) - std::log(0.5 * fit.d0);
    } else {
        fit.d0 = kInf;
    }
    if (covariate) {
        std::vector<double> log_s02(n);
        for (std::size_t k = 0; k < n; ++k) log_s02[k] = location[k] + shift;
        const auto per_gene = detail::spread_trend(*covariate, idx, log_s02);
        fit.s02_trend.resize(per_gene.size());
        for (std::size_t g = 0; g < per_gene.size(); ++g) fit.s02_trend[g] = std::exp(per_gene[g]);
        fit.s02 = std::exp(detail::mean_of(log_s02));
    } else {
        fit.s02 = std::exp(location.front() + shift);
    }
    return fit;
}

/// Maps variances on unequal residual df to the quantile-equivalent value on
/// the largest df under the fitted s02 * F(df, d0) law. Genes already on the
/// largest df, and genes without usable variances, are returned unchanged.
inline std::vector<double> equalize_df(std::span<const double> s2, std::span<const double> df, double d0,
                                       double s02) {
    if (s2.size() != df.size()) throw DataError("equalize_df: length mismatch");
    detail::require_domain(d0 > 0.0 && s02 > 0.0 && std::isfinite(s02), "equalize_df: invalid hyperparameters");
    double d = 0.0;
    for (std::size_t g = 0; g < df.size(); ++g)
        if (detail::usable_variance(s2[g], df[g])) d = std::max(d, df[g]);
    std::vector<double> out(s2.begin(), s2.end());
    for (std::size_t g = 0; g < s2.size(); ++g) {
        if (!detail::usable_variance(s2[g], df[g]) || df[g] == d || s2[g] == 0.0) continue;
        const double ratio = s2[g] / s02;
        const double lower = f_cdf(ratio, df[g], d0);
        double q;
        if (lower <= 0.5) {
            if (!(lower > 0.0)) throw NumericalError("equalize_df: lower-tail probability underflowed");
            q = f_quantile(lower, d, d0);
        } else {
            const double upper = f_sf(ratio, df[g], d0);
            if (!(upper > 0.0)) throw NumericalError("equalize_df: upper-tail probability underflowed");
            q = f_quantile_upper(upper, d, d0);
        }
        if (!std::isfinite(q)) throw NumericalError("equalize_df: transformed variance is not finite");
        out[g] = s02 * q;
    }
    return out;
}

/// Variances clamped to their empirical p_lower and 1 - p_upper quantiles.
struct Winsorized {
    std::vector<double> values;
    double q_lower = 0.0;
    double q_upper = 0.0;
};

/// Empirical quantile of an ascending sample by linear interpolation
/// between order statistics (position (n - 1) p).
inline double sorted_quantile(std::span<const double> sorted, double p) {
    const double h = static_cast<double>(sorted.size() - 1) * p;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    if (lo + 1 >= sorted.size()) return sorted.back();
    return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[lo + 1] - sorted[lo]);
}

inline Winsorized winsorize(std::span<const double> s2, const WinsorSpec& spec) {
    spec.validate();
    if (s2.empty()) throw DataError("winsorize: empty input");
    std::vector<double> sorted(s2.begin(), s2.end());
    std::sort(sorted.begin(), sorted.end());
    Winsorized w;
    w.q_lower = sorted_quantile(sorted, spec.p_lower);
    w.q_upper = sorted_quantile(sorted, 1.0 - spec.p_upper);
    w.values.assign(s2.begin(), s2.end());
    for (double& v : w.values) v = std::clamp(v, w.q_lower, w.q_upper);
    return w;
}

/// Result of the d_outlier recurrence.
struct DOutlierSolution {
    double value = kInf;
    /// Number of recurrence updates applied.
    int iterations = 0;
    /// Upper-tail probability at each iterate, starting with the initial value.
    std::vector<double> trace;
    bool converged = false;
};

/// Finds d_out such that the median of F(d_g, d_out) equals s2max_ratio,
/// using d_out <- d_out * log(0.5) / log(p) from d_out = d0, where p is the
/// upper-tail probability of s2max_ratio. The result never exceeds d0: a
/// ratio at or below the median of F(d_g, d0) returns d0 itself. With
/// d0 = inf the recurrence starts from 1e4.
inline DOutlierSolution solve_d_outlier(double s2max_ratio, double d_g, double d0, double tol = 1e-10,
                                        int max_iter = 1000) {
    detail::require_domain(std::isfinite(s2max_ratio) && s2max_ratio > 0.0,
                           "solve_d_outlier: ratio must be finite and positive");
    detail::check_df(d_g, d0);
    DOutlierSolution sol;
    double d = d0;
    double p = f_sf(s2max_ratio, d_g, d);
    sol.trace.push_back(p);
    if (p >= 0.5) {
        sol.value = d0;
        sol.converged = true;
        return sol;
    }
    if (std::isinf(d)) {
        d = 1e4;
        p = f_sf(s2max_ratio, d_g, d);
        sol.trace.push_back(p);
        if (p >= 0.5) {
            sol.value = d;
            sol.converged = true;
            return sol;
        }
    }
    while (std::fabs(p - 0.5) > tol && sol.iterations < max_iter) {
        d = std::min(d0, d * std::log(0.5) / std::log(p));
        p = f_sf(s2max_ratio, d_g, d);
        sol.trace.push_back(p);
        ++sol.iterations;
    }
    sol.value = d;
    sol.converged = std::fabs(p - 0.5) <= tol;
    return sol;
}

/// Probability that each gene is not an outlier, given outlier p-values.
///
/// Ratio p_g / r_g capped at 1, with r_g = (rank - 0.5) / G (average ranks
/// for ties), then made non-decreasing in p: in increasing p order the
/// prefix up to the first minimum of the cumulative mean is set to that
/// minimum, then a cumulative maximum is applied. Tied p-values receive
/// equal values.
inline std::vector<double> outlier_posterior(std::span<const double> p) {
    const std::size_t G = p.size();
    std::vector<double> pi(G);
    if (G == 0) return pi;
    for (double v : p) detail::require_domain(v >= 0.0 && v <= 1.0, "outlier_posterior: p-values must lie in [0, 1]");

    std::vector<std::size_t> order(G);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return p[a] < p[b]; });

    // Ratios in sorted order, tie groups sharing the average rank.
    std::vector<double> ratio(G);
    for (std::size_t start = 0; start < G;) {
        std::size_t end = start + 1;
        while (end < G && p[order[end]] == p[order[start]]) ++end;
        const double avg_rank = 0.5 * static_cast<double>(start + 1 + end);
        const double r = (avg_rank - 0.5) / static_cast<double>(G);
        const double value = std::min(1.0, p[order[start]] / r);
        for (std::size_t k = start; k < end; ++k) ratio[k] = value;
        start = end;
    }

    double running = 0.0;
    double min_mean = kInf;
    std::size_t argmin = 0;
    for (std::size_t k = 0; k < G; ++k) {
        running += ratio[k];
        const double mean = running / static_cast<double>(k + 1);
        if (mean < min_mean) {
            min_mean = mean;
            argmin = k;
        }
    }
    for (std::size_t k = 0; k <= argmin; ++k) ratio[k] = min_mean;
    for (std::size_t k = 1; k < G; ++k) ratio[k] = std::max(ratio[k], ratio[k - 1]);

    // Ties may have been split by the prefix step; give each group its maximum.
    for (std::size_t start = 0; start < G;) {
        std::size_t end = start + 1;
        while (end < G && p[order[end]] == p[order[start]]) ++end;
        const double value = ratio[end - 1];
        for (std::size_t k = start; k < end; ++k) pi[order[k]] = value;
        start = end;
    }
    return pi;
}

/// d0g = pi * d0 + (1 - pi) * d_outlier, exactly d0 where pi = 1.
inline std::vector<double> assign_d0g(std::span<const double> pi, double d0, double d_outlier) {
    detail::require_domain(d_outlier <= d0, "assign_d0g: d_outlier must not exceed d0");
    std::vector<double> out(pi.size());
    for (std::size_t g = 0; g < pi.size(); ++g) {
        const double w = pi[g];
        if (w >= 1.0)
            out[g] = d0;
        else if (w <= 0.0)
            out[g] = d_outlier;
        else
            out[g] = std::clamp(w * d0 + (1.0 - w) * d_outlier, d_outlier, d0);
    }
    return out;
}

/// Hyperprior for the ordinary (non-robust) method: every gene gets d0.
inline Hyperprior standard_hyperprior(const FDistFit& fit, std::size_t n_genes) {
    Hyperprior hp;
    hp.d0 = fit.d0;
    hp.s02_scale = fit.s02;
    hp.trend_enabled = !fit.s02_trend.empty();
    hp.s02 = hp.trend_enabled ? fit.s02_trend : std::vector<double>(n_genes, fit.s02);
    hp.d0g.assign(n_genes, fit.d0);
    hp.pi.assign(n_genes, 1.0);
    hp.d_outlier = fit.d0;
    return hp;
}

struct RobustOptions {
    WinsorSpec winsor{};
    TrendOptions trend{};
    std::size_t quadrature_nodes = 128;
    /// Lower limit for d0 in the moment-matching solve.
    double min_d0 = 1e-2;
};

/// Moment matching for the Winsorized log variances: the d0 whose
/// Winsorized log-F variance equals s2z on d_g degrees of freedom.
/// Returns +inf when s2z does not exceed the d0 = inf limit and min_d0
/// when it exceeds the value at min_d0.
inline double solve_winsorized_d0(double s2z, double d_g, const WinsorSpec& spec, std::size_t k = 128,
                                  double min_d0 = 1e-2) {
    const auto phi = [&](double inv_d0) {
        const double d0 = inv_d0 == 0.0 ? kInf : 1.0 / inv_d0;
        return winsorized_logF_moments(d_g, d0, spec, k).variance;
    };
    const double f_lo = phi(0.0) - s2z;
    if (f_lo >= 0.0) return kInf;
    const double x_hi = 1.0 / min_d0;
    const double f_hi = phi(x_hi) - s2z;
    if (f_hi <= 0.0) return min_d0;
    const double root =
        detail::brent_root([&](double x) { return phi(x) - s2z; }, 0.0, x_hi, f_lo, f_hi, 1e-15, 1e-11);
    return root > 0.0 ? 1.0 / root : kInf;
}

/// Robust estimation of the prior on Winsorized log variances, followed by
/// gene-specific prior degrees of freedom for hypervariable genes.
///
/// With a covariate, log variances are first detrended by a robust lowess
/// fit against it and the per-gene prior locations are the unlogged trend
/// times the location estimated from the detrended variances. Unequal
/// residual df are mapped to the largest df before Winsorizing. Genes
/// without usable variances get pi = 1 and d0g = d0.
inline Hyperprior fit_fdist_robustly(std::span<const double> s2, std::span<const double> df,
                                     const RobustOptions& opt = {},
                                     std::optional<std::span<const double>> covariate = std::nullopt) {
    opt.winsor.validate();
    const std::size_t G = s2.size();
    const auto idx = detail::usable_indices(s2, df);
    if (covariate && covariate->size() != G) throw DataError("covariate length does not match variances");
    const std::size_t n = idx.size();
    const std::vector<double> used_df = detail::gather(df, idx);
    std::vector<double> x = detail::floored(detail::gather(s2, idx));

    Hyperprior hp;
    hp.trend_enabled = covariate.has_value();
    std::vector<double> trend(n, 0.0);
    std::vector<double> trend_all(G, 0.0);
    if (covariate) {
        std::vector<double> logx(n);
        for (std::size_t k = 0; k < n; ++k) logx[k] = std::log(x[k]);
        trend = fit_trend(logx, detail::gather(*covariate, idx), true, opt.trend);
        trend_all = detail::spread_trend(*covariate, idx, trend);
        for (std::size_t k = 0; k < n; ++k) x[k] = std::exp(logx[k] - trend[k]);
    }

    const double d = *std::max_element(used_df.begin(), used_df.end());
    std::vector<double> xeq = x;
    if (std::any_of(used_df.begin(), used_df.end(), [&](double v) { return v != d; })) {
        const FDistFit pre = fit_fdist(x, used_df);
        xeq = equalize_df(x, used_df, pre.d0, pre.s02);
    }

    const Winsorized win = winsorize(xeq, opt.winsor);
    std::vector<double> z(n);
    for (std::size_t k = 0; k < n; ++k) z[k] = std::log(win.values[k]);
    const double zbar = detail::mean_of(z);
    const double s2z = detail::sample_variance(z, zbar);

    hp.d0 = solve_winsorized_d0(s2z, d, opt.winsor, opt.quadrature_nodes, opt.min_d0);
    hp.s02_scale = std::exp(zbar - winsorized_logF_moments(d, hp.d0, opt.winsor, opt.quadrature_nodes).mean);

    hp.s02.resize(G);
    for (std::size_t g = 0; g < G; ++g) hp.s02[g] = hp.s02_scale * std::exp(trend_all[g]);

    hp.pi.assign(G, 1.0);
    if (!std::isfinite(hp.d0)) {
        // No spread beyond sampling noise: nothing to call an outlier.
        hp.d_outlier = kInf;
        hp.d0g.assign(G, kInf);
        return hp;
    }

    // Outlier p-values on each gene's own df, against its own prior location.
    std::vector<double> p(n);
    double max_ratio = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        // x is already detrended, so s2 / s0g^2 = x / s02_scale.
        p[k] = f_sf(x[k] / hp.s02_scale, used_df[k], hp.d0);
        max_ratio = std::max(max_ratio, xeq[k] / hp.s02_scale);
    }
    const std::vector<double> pi_used = outlier_posterior(p);
    hp.d_outlier = solve_d_outlier(max_ratio, d, hp.d0).value;

    for (std::size_t k = 0; k < n; ++k) hp.pi[idx[k]] = pi_used[k];
    hp.d0g = assign_d0g(hp.pi, hp.d0, hp.d_outlier);
    return hp;
}

}  // namespace rebayes
