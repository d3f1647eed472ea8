#pragma once

// Gauss-Legendre rules and the mean/variance of the log of a Winsorized
// F variate.

#include <cmath>
#include <cstddef>
#include <map>
#include <mutex>
#include <vector>

#include <Eigen/Eigenvalues>

#include "errors.hpp"
#include "specfun.hpp"

namespace rebayes {

/// Nodes and weights of a k-point rule on [a, b]; weights sum to b - a.
struct QuadratureRule {
    std::vector<double> nodes;
    std::vector<double> weights;
    double a = 0.0;
    double b = 0.0;

    std::size_t size() const { return nodes.size(); }

    template <typename F>
    double integrate(F&& f) const {
        double sum = 0.0;
        for (std::size_t i = 0; i < nodes.size(); ++i) sum += weights[i] * f(nodes[i]);
        return sum;
    }
};

/// Tail proportions for Winsorizing. Both must lie strictly inside (0, 0.5).
struct WinsorSpec {
    double p_lower = 0.05;
    double p_upper = 0.10;

    void validate() const {
        detail::require_domain(p_lower > 0.0 && p_lower < 0.5,
                               "Winsorizing lower tail proportion must lie in (0, 0.5)");
        detail::require_domain(p_upper > 0.0 && p_upper < 0.5,
                               "Winsorizing upper tail proportion must lie in (0, 0.5)");
    }
};

namespace detail {

// Golub-Welsch on [-1, 1]: the nodes are the eigenvalues of the Jacobi
// matrix of the Legendre recurrence, the weights 2 * (first eigenvector
// component)^2.
inline QuadratureRule golub_welsch_legendre(std::size_t k) {
    const auto n = static_cast<Eigen::Index>(k);
    Eigen::VectorXd diag = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd offdiag(std::max<Eigen::Index>(n - 1, 0));
    for (Eigen::Index j = 1; j < n; ++j) {
        const double jd = static_cast<double>(j);
        offdiag(j - 1) = jd / std::sqrt(4.0 * jd * jd - 1.0);
    }
    QuadratureRule rule;
    rule.a = -1.0;
    rule.b = 1.0;
    rule.nodes.resize(k);
    rule.weights.resize(k);
    if (k == 1) {
        rule.nodes[0] = 0.0;
        rule.weights[0] = 2.0;
        return rule;
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver;
    solver.computeFromTridiagonal(diag, offdiag, Eigen::ComputeEigenvectors);
    if (solver.info() != Eigen::Success) throw NumericalError("Golub-Welsch eigen decomposition failed");
    const Eigen::VectorXd& values = solver.eigenvalues();  // ascending
    const Eigen::MatrixXd& vectors = solver.eigenvectors();
    for (Eigen::Index i = 0; i < n; ++i) {
        rule.nodes[i] = values(i);
        rule.weights[i] = 2.0 * vectors(0, i) * vectors(0, i);
    }
    // The Legendre rule is symmetric about 0; enforce it exactly.
    for (std::size_t i = 0; i < k / 2; ++i) {
        const std::size_t j = k - 1 - i;
        const double node = 0.5 * (rule.nodes[j] - rule.nodes[i]);
        const double weight = 0.5 * (rule.weights[i] + rule.weights[j]);
        rule.nodes[i] = -node;
        rule.nodes[j] = node;
        rule.weights[i] = rule.weights[j] = weight;
    }
    if (k % 2 == 1) rule.nodes[k / 2] = 0.0;
    return rule;
}

inline const QuadratureRule& cached_legendre(std::size_t k) {
    static std::mutex mutex;
    static std::map<std::size_t, QuadratureRule> cache;
    std::lock_guard lock(mutex);
    auto it = cache.find(k);
    if (it == cache.end()) it = cache.emplace(k, golub_welsch_legendre(k)).first;
    return it->second;
}

}  // namespace detail

/// k-point Gauss-Legendre rule on [a, b], exact for polynomials of degree <= 2k - 1.
inline QuadratureRule gauss_legendre(std::size_t k, double a, double b) {
    detail::require_domain(k >= 1, "gauss_legendre: k must be at least 1");
    detail::require_domain(std::isfinite(a) && std::isfinite(b) && a < b,
                           "gauss_legendre: need finite a < b");
    const QuadratureRule& unit = detail::cached_legendre(k);
    const double half = 0.5 * (b - a);
    const double mid = 0.5 * (a + b);
    QuadratureRule rule;
    rule.a = a;
    rule.b = b;
    rule.nodes.resize(k);
    rule.weights.resize(k);
    for (std::size_t i = 0; i < k; ++i) {
        rule.nodes[i] = mid + half * unit.nodes[i];
        rule.weights[i] = half * unit.weights[i];
    }
    return rule;
}

/// Change of variables used for the central (un-Winsorized) part of the
/// log-F moment integrals.
enum class MomentTransform {
    /// Integrate over t = log f between log q_l and log q_u.
    log_scale,
    /// Integrate over u = f / (1 + f) between q_l/(1+q_l) and q_u/(1+q_u).
    /// Loses accuracy when the upper quantile is huge (small d0) or the
    /// tails are tiny, since the integrand then has a near-endpoint
    /// singularity.
    unit_interval,
};

/// Mean and variance of log(win(f)) for f ~ F(d_g, d0).
struct WinsorizedMoments {
    double mean = 0.0;
    double variance = 0.0;
    double log_q_lower = 0.0;
    double log_q_upper = 0.0;
};

/// Mean and variance of the log Winsorized F distribution on (d_g, d0)
/// degrees of freedom, where Winsorizing clamps at the lower-tail p_lower and
/// upper-tail p_upper quantiles of F(d_g, d0). d0 may be +inf.
inline WinsorizedMoments winsorized_logF_moments(double d_g, double d0, const WinsorSpec& spec,
                                                 std::size_t k = 128,
                                                 MomentTransform transform = MomentTransform::log_scale) {
    spec.validate();
    detail::check_df(d_g, d0);
    detail::require_domain(k >= 16, "winsorized_logF_moments: need at least 16 nodes");

    WinsorizedMoments m;
    m.log_q_lower = detail::f_log_quantile(spec.p_lower, d_g, d0, false);
    m.log_q_upper = detail::f_log_quantile(spec.p_upper, d_g, d0, true);
    const double lo = m.log_q_lower;
    const double hi = m.log_q_upper;
    if (!std::isfinite(lo) || !std::isfinite(hi) || !(lo < hi))
        throw NumericalError("winsorized_logF_moments: F quantiles are not finite and ordered");

    std::vector<double> t;
    std::vector<double> w;  // weight times density of log f at t
    if (transform == MomentTransform::log_scale) {
        const QuadratureRule rule = gauss_legendre(k, lo, hi);
        t = rule.nodes;
        w.resize(k);
        for (std::size_t i = 0; i < k; ++i) w[i] = rule.weights[i] * log_f_variate_pdf(t[i], d_g, d0);
    } else {
        const double q_lo = std::exp(lo);
        const double q_hi = std::exp(hi);
        const QuadratureRule rule = gauss_legendre(k, q_lo / (1.0 + q_lo), q_hi / (1.0 + q_hi));
        t.resize(k);
        w.resize(k);
        for (std::size_t i = 0; i < k; ++i) {
            const double u = rule.nodes[i];
            const double f = u / (1.0 - u);
            t[i] = std::log(f);
            w[i] = rule.weights[i] * f_pdf(f, d_g, d0) / ((1.0 - u) * (1.0 - u));
        }
    }

    double mean = spec.p_lower * lo + spec.p_upper * hi;
    for (std::size_t i = 0; i < k; ++i) mean += w[i] * t[i];
    double var = spec.p_lower * (lo - mean) * (lo - mean) + spec.p_upper * (hi - mean) * (hi - mean);
    for (std::size_t i = 0; i < k; ++i) var += w[i] * (t[i] - mean) * (t[i] - mean);
    m.mean = mean;
    m.variance = var;
    return m;
}

}  // namespace rebayes
